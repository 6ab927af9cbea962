"""Exact optimum by branch-and-bound, NE enumeration, and the MILP model in LP text form."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .game import build_game, empty_allocation, total_delay
from .network import Scenario
from .solver import FULL, BudgetExceeded, is_nash

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
BUDGET = "BudgetExceeded"


@dataclass
class OptimalResult:
    status: str
    allocation: Optional[dict]
    delay: Optional[int]
    nodes: int

    @property
    def optimal(self):
        return self.status == OPTIMAL


class _OutOfBudget(Exception):
    pass


class _Search:
    """Incremental partial assignment with collision and occupancy bookkeeping."""

    def __init__(self, s: Scenario, release_final_edge=False, budget=None):
        self.s = s
        self.release = release_final_edge
        self.budget = budget
        self.nodes = 0
        cars = sorted(s.cars, key=lambda k: (s.trip[k].depart, k))
        self.cars = cars
        self.order = [v for k in cars for v in s.car_vars[k]]
        self.b = empty_allocation(s)
        self.at = {}  # (i, t) -> paths already holding that slot
        self.occ = {e: np.zeros(s.T + 1, dtype=np.int64) for e in s.cars_on_edge}
        self.spans = {}

    def tick(self):
        self.nodes += 1
        if self.budget is not None and self.nodes > self.budget:
            raise _OutOfBudget

    def window(self, v):
        s = self.s
        p = s.prev_var.get(v)
        tmin = s.trip[v[1]].depart if p is None else self.b[p] + s.network.edges[(p[0], v[0])]
        hi = min(s.T, tmin + s.T_UB)
        if v not in s.next_var:
            hi = min(hi, s.T - s.network.edges[s.out_edge[v]])
        return tmin, hi

    def place(self, v, t) -> bool:
        s = self.s
        i = v[0]
        path = s.path[v]
        held = self.at.get((i, t))
        if held:
            conf = s.conflicts[i]
            for q in held:
                if frozenset((path, q)) in conf:
                    return False
        spans = []
        p = s.prev_var.get(v)
        if p is not None:
            spans.append(((p[0], i), self.b[p], t))
        if v not in s.next_var:
            e = s.out_edge[v]
            stop = min(s.T + 1, t + s.network.edges[e]) if self.release else s.T + 1
            spans.append((e, t, stop))
        done = []
        for e, lo, hi in spans:
            seg = self.occ[e][lo:hi]
            seg += 1
            done.append((e, lo, hi))
            if hi > lo and seg.max() > s.K_UB:
                for e2, lo2, hi2 in done:
                    self.occ[e2][lo2:hi2] -= 1
                return False
        self.spans[v] = done
        self.at.setdefault((i, t), []).append(path)
        self.b[v] = t
        return True

    def remove(self, v):
        t = self.b[v]
        self.at[(v[0], t)].pop()
        for e, lo, hi in self.spans.pop(v):
            self.occ[e][lo:hi] -= 1
        self.b[v] = None

    def car_min_delay(self, k, cap):
        """Least delay car k can still get given the cars already placed (None if none)."""
        vs = self.s.car_vars[k]
        best = [cap]

        def rec(n, d):
            self.tick()
            if n == len(vs):
                best[0] = d
                return
            v = vs[n]
            tmin, hi = self.window(v)
            for t in range(tmin, hi + 1):
                if d + t - tmin >= best[0]:
                    break
                if self.place(v, t):
                    rec(n + 1, d + t - tmin)
                    self.remove(v)
                    if best[0] == 0:
                        return

        rec(0, 0)
        return None if best[0] >= cap else best[0]


def solve_optimal(s: Scenario, budget: Optional[int] = 5_000_000, release_final_edge=False) -> OptimalResult:
    """Minimum total delay over every feasible allocation."""
    srch = _Search(s, release_final_edge, budget)
    order = srch.order
    n = len(order)
    first_pos = {}
    for pos, v in enumerate(order):
        first_pos.setdefault(v[1], pos)
    starts = {pos: k for k, pos in first_pos.items()}
    rest_of = {}
    for idx, k in enumerate(srch.cars):
        rest_of[k] = srch.cars[idx + 1:]
    big = 1 + s.T * max(1, len(s.variables))
    best = {"delay": big, "alloc": None}

    def dfs(pos, delay, lb):
        srch.tick()
        if pos == n:
            if delay < best["delay"]:
                best["delay"] = delay
                best["alloc"] = dict(srch.b)
            return
        if pos in starts:
            k = starts[pos]
            lb = 0
            for other in [k] + list(rest_of[k]):
                m = srch.car_min_delay(other, best["delay"] - delay - lb)
                if m is None:
                    return
                lb += m
        v = order[pos]
        tmin, hi = srch.window(v)
        for t in range(tmin, hi + 1):
            w = t - tmin
            if delay + w + lb >= best["delay"]:
                break
            if srch.place(v, t):
                dfs(pos + 1, delay + w, lb)
                srch.remove(v)

    try:
        dfs(0, 0, 0)
    except _OutOfBudget:
        return OptimalResult(BUDGET, best["alloc"], best["delay"] if best["alloc"] else None, srch.nodes)
    if best["alloc"] is None:
        return OptimalResult(INFEASIBLE, None, None, srch.nodes)
    return OptimalResult(OPTIMAL, best["alloc"], best["delay"], srch.nodes)


def feasible_allocations(s: Scenario, budget: Optional[int] = 5_000_000, release_final_edge=False):
    """Yield every feasible allocation (as fresh dicts)."""
    srch = _Search(s, release_final_edge, budget)
    order = srch.order

    def rec(pos):
        srch.tick()
        if pos == len(order):
            yield dict(srch.b)
            return
        v = order[pos]
        tmin, hi = srch.window(v)
        for t in range(tmin, hi + 1):
            if srch.place(v, t):
                yield from rec(pos + 1)
                srch.remove(v)

    try:
        yield from rec(0)
    except _OutOfBudget:
        raise BudgetExceeded(f"feasible-set enumeration exceeded {budget} nodes") from None


def enumerate_nash(s: Scenario, agent_model, budget: Optional[int] = 5_000_000, release_final_edge=False):
    """All feasible pure equilibria with their total delay, in search order."""
    g = build_game(s, agent_model, release_final_edge)
    out = []
    for a in feasible_allocations(s, budget, release_final_edge):
        if is_nash(g, a, FULL, budget=budget):
            out.append((a, total_delay(s, a)))
    return out


# ---------------------------------------------------------------------------
# MILP

def yname(t, v, e):
    return f"y_{t}_{v[1]}_{e[0]}_{e[1]}"


CONST = "const_one"


class MilpModel:
    def __init__(self, s: Scenario, release_final_edge=False):
        self.s = s
        self.release = release_final_edge
        self.columns = [yname(t, v, s.out_edge[v]) for v in _var_order(s) for t in range(s.T + 1)]
        self.objective = {}
        self.offset = 0
        self.rows = []  # (name, {col: coef}, sense, rhs)
        self._build()

    def y(self, v, t):
        return yname(t, v, self.s.out_edge[v])

    def _times(self, v, coef=None, ts=None):
        ts = range(self.s.T + 1) if ts is None else ts
        return {self.y(v, t): (t if coef is None else coef) for t in ts}

    def _build(self):
        s = self.s
        edges = s.network.edges
        T = s.T
        for k in s.cars:
            vs = s.car_vars[k]
            last = vs[-1]
            for t in range(T + 1):
                self.objective[self.y(last, t)] = t
            self.offset -= s.trip[k].depart + sum(edges[s.out_edge[v]] for v in vs[:-1])
        for v in _var_order(s):
            k = v[1]
            e = s.out_edge[v]
            tag = f"{k}_{e[0]}_{e[1]}"
            p = s.prev_var.get(v)
            expr = self._times(v)
            if p is None:
                base = s.trip[k].depart
            else:
                for col, c in self._times(p).items():
                    expr[col] = expr.get(col, 0) - c
                base = edges[(p[0], v[0])]
            expr = {c: x for c, x in expr.items() if x}
            self.rows.append((f"h_wblb_{tag}", expr, ">=", base))
            self.rows.append((f"h_wbub_{tag}", dict(expr), "<=", base + s.T_UB))
        for e in sorted(s.cars_on_edge):
            ks = s.cars_on_edge[e]
            # With one allocation per variable each car adds at most 1 here.
            if len(ks) <= s.K_UB:
                continue
            i, j = e
            for t in range(T + 1):
                expr = {}
                for k in ks:
                    for tt in range(t + 1):
                        expr[self.y((i, k), tt)] = expr.get(self.y((i, k), tt), 0) + 1
                    if (j, k) in s.out_edge:
                        for tt in range(t + 1):
                            col = self.y((j, k), tt)
                            expr[col] = expr.get(col, 0) - 1
                    elif self.release:
                        for tt in range(t - edges[e] + 1):
                            expr[self.y((i, k), tt)] -= 1
                expr = {c: x for c, x in expr.items() if x}
                if expr:
                    self.rows.append((f"h_lcap_{t}_{i}_{j}", expr, "<=", s.K_UB))
        for k in s.cars:
            vs = s.car_vars[k]
            dep = s.trip[k].depart
            self.rows.append((f"h_dep_{k}", self._times(vs[0], 1, range(dep, T + 1)), "=", 1))
            L = edges[s.out_edge[vs[-1]]]
            late = range(max(0, T - L + 1), T + 1)
            self.rows.append((f"h_arr_{k}", self._times(vs[-1], 1, late), "=", 0))
        for i in sorted(s.network.intersections):
            vs = s.vars_at.get(i, ())
            if len(vs) < 2:
                continue
            for n, x in enumerate(s.effective_crossing_sets(i)):
                members = [v for v in vs if s.path[v] in x]
                if len(members) < 2:
                    continue
                for t in range(T + 1):
                    self.rows.append((f"h_col_{i}_{n}_{t}", {self.y(v, t): 1 for v in members}, "<=", 1))
        for v in _var_order(s):
            e = s.out_edge[v]
            self.rows.append((f"h_once_{v[1]}_{e[0]}_{e[1]}", self._times(v, 1), "=", 1))
        for e in sorted(s.cars_on_edge):
            users = [(e[0], k) for k in s.cars_on_edge[e] if (e[0], k) in s.out_edge]
            if len(users) < 2:
                continue
            for t in range(T + 1):
                self.rows.append((f"h_edgex_{t}_{e[0]}_{e[1]}", {self.y(v, t): 1 for v in users}, "<=", 1))
        for k in s.cars:
            vs = s.car_vars[k]
            if len(vs) < 2:
                continue
            for t in range(T + 1):
                self.rows.append((f"h_carx_{t}_{k}", {self.y(v, t): 1 for v in vs}, "<=", 1))

    def objective_value(self, values):
        return sum(c * values.get(col, 0) for col, c in self.objective.items()) + self.offset

    def violated_rows(self, values):
        bad = []
        for name, expr, sense, rhs in self.rows:
            lhs = sum(c * values.get(col, 0) for col, c in expr.items())
            ok = lhs <= rhs if sense == "<=" else lhs >= rhs if sense == ">=" else lhs == rhs
            if not ok:
                bad.append(name)
        return bad

    def to_lp(self, header=None) -> str:
        out = ["Minimize" + (f" \\ {header}" if header else "")]
        obj = dict(self.objective)
        if self.offset:
            obj[CONST] = self.offset
        out += _wrap(" obj:", obj)
        out.append("Subject To")
        for name, expr, sense, rhs in self.rows:
            lines = _wrap(f" {name}:", expr)
            lines[-1] += f" {sense} {rhs}"
            out += lines
        out.append("Bounds")
        out.append(f" {CONST} = 1")
        out.append("Binary")
        cols = list(self.columns)
        for n in range(0, len(cols), 8):
            out.append(" " + " ".join(cols[n:n + 8]))
        out.append("End")
        return "\n".join(out) + "\n"


def _var_order(s):
    return sorted(s.variables, key=lambda v: (v[1], s.car_vars[v[1]].index(v)))


def _wrap(head, expr, width=8):
    terms = []
    for col, c in expr.items():
        if c == 0:
            continue
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        terms.append(f"{sign} {col}" if mag == 1 else f"{sign} {mag} {col}")
    if not terms:
        terms = ["+ 0 " + CONST]
    lines = []
    for n in range(0, len(terms), width):
        lines.append((head if n == 0 else "  ") + " " + " ".join(terms[n:n + width]))
    return lines


def build_milp(s: Scenario, release_final_edge=False) -> MilpModel:
    return MilpModel(s, release_final_edge)


def export_lp(s: Scenario, release_final_edge=False, header=None) -> str:
    return MilpModel(s, release_final_edge).to_lp(header)


def allocation_to_y(s: Scenario, a) -> dict:
    missing = [v for v in s.variables if a.get(v) is None]
    if missing:
        raise ValueError(f"allocation is incomplete; unallocated: {missing[:5]}")
    vals = {yname(a[v], v, s.out_edge[v]): 1 for v in s.variables}
    vals[CONST] = 1
    return vals


def check_solution_against_milp(s: Scenario, a, release_final_edge=False) -> list:
    """Names of MILP rows the (fully allocated) assignment violates."""
    vals = allocation_to_y(s, a)
    return MilpModel(s, release_final_edge).violated_rows(vals)
