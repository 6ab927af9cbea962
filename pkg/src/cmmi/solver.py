"""Best-response dynamics with downstream reset, PBA start, DSA rounds and NE checks."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .game import (AgentModel, CostVector, GameInstance, _Evaluator, empty_allocation,
                   occupancy_profile, utility, zero_wait_allocation)

NASH = "NashReached"
CAP = "IterationCap"
RESTRICTED = "restricted"
FULL = "full"


class BudgetExceeded(RuntimeError):
    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


@dataclass(frozen=True)
class DSAConfig:
    p: float = 0.7
    seed: int = 0
    max_rounds: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError(f"p must lie in (0, 1], got {self.p}")


@dataclass(frozen=True)
class SolverConfig:
    agent_model: AgentModel = AgentModel.CAR
    init: object = "empty"  # "empty", "pba", or an allocation dict
    best_update: bool = False
    dsa: Optional[DSAConfig] = None
    agent_order: Optional[Sequence] = None  # None means ascending agent id
    max_iterations: Optional[int] = None
    release_final_edge: bool = False

    def __post_init__(self):
        object.__setattr__(self, "agent_model", AgentModel.parse(self.agent_model))
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if isinstance(self.init, str) and self.init not in ("empty", "pba"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class UpdateRecord:
    iteration: int
    agent: object
    old: list
    new: list
    delta: CostVector

    def as_dict(self):
        agent = list(self.agent) if isinstance(self.agent, tuple) else self.agent
        return {"iteration": self.iteration, "agent": agent, "old": self.old,
                "new": self.new, "delta": self.delta.as_dict()}


@dataclass
class SolveTrace:
    records: list = field(default_factory=list)
    update_counts: dict = field(default_factory=dict)
    termination: str = NASH
    evals: int = 0
    sweeps: int = 0

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.as_dict(), sort_keys=True) + "\n" for r in self.records)

    def summary(self):
        return {"termination": self.termination, "updates": len(self.records),
                "evals": self.evals, "sweeps": self.sweeps,
                "max_updates_per_agent": max(self.update_counts.values(), default=0)}


class _Counter:
    __slots__ = ("n",)

    def __init__(self):
        self.n = 0


# ---------------------------------------------------------------------------

def down_reset(g: GameInstance, j, a_old, a_new):
    """Clear every stale slot downstream of the first slot ``j`` changed, per car."""
    s = g.scenario
    owned = set(g.owned[j])
    touched = set()
    for v in s.variables:
        if a_new.get(v) != a_old.get(v):
            if v not in owned:
                raise ValueError(f"agent {j!r} does not own variable {v}")
            touched.add(v[1])
    out = dict(a_new)
    for k in sorted(touched):
        changed = False
        for v in s.car_vars[k]:
            fresh = a_new.get(v) != a_old.get(v)
            if changed and not fresh:
                out[v] = None
            changed = changed or fresh
    return out


def fastest_feasible(g: GameInstance, j, a, counter: Optional[_Counter] = None) -> dict:
    """Earliest-slot action for ``j`` given everyone else's current slots.

    Owned variables are decided one at a time (route order for a car, car id
    order at an intersection).  A slot is accepted when no constraint that
    depends on that single variable is violated; if none fits, the earliest
    legal slot is kept so the car still holds a reservation.
    """
    owned = g.owned[j]
    b = dict(a)
    for v in owned:
        b[v] = None
    own = set(owned)
    for v in owned:
        b[v] = _scan(g, b, a, v, own, counter)
    return {v: b[v] for v in owned}


def _scan(g, b, a_old, v, own, counter):
    s = g.scenario
    edges = s.network.edges
    i, k = v
    p = s.prev_var.get(v)
    if p is None:
        tmin = s.trip[k].depart
    elif b[p] is None:
        return None
    else:
        tmin = b[p] + edges[(p[0], i)]
    if tmin > s.T:
        return None
    hi = min(s.T, tmin + s.T_UB)

    my_path = s.path[v]
    blocked = {b[u] for u in s.vars_at[i]
               if u != v and b.get(u) is not None and s.crosses(i, my_path, s.path[u])}
    nxt = s.next_var.get(v)
    out_len = edges[s.out_edge[v]]
    check_next = nxt is not None and nxt not in own and b.get(nxt) is not None
    occ_in = None
    if p is not None:
        occ_in = occupancy_profile(s, b, (p[0], i), g.release_final_edge, exclude=k)
    occ_out = None
    if nxt is None:
        occ_out = occupancy_profile(s, b, s.out_edge[v], g.release_final_edge, exclude=k)

    for t in range(tmin, hi + 1):
        if counter is not None:
            counter.n += 1
        if t in blocked:
            continue
        if nxt is None and t + out_len > s.T:
            continue
        if check_next and t == a_old.get(v):
            w = b[nxt] - t - out_len
            if not 0 <= w <= s.T_UB:
                continue
        if occ_in is not None and t > b[p] and occ_in[b[p]:t].max() + 1 > s.K_UB:
            continue
        if occ_out is not None:
            stop = min(s.T + 1, t + out_len) if g.release_final_edge else s.T + 1
            if occ_out[t:stop].max() + 1 > s.K_UB:
                continue
        return t
    return tmin


def pba_init(g: GameInstance) -> dict:
    """Every car on its zero-wait schedule, ignoring all other cars."""
    return zero_wait_allocation(g.scenario)


def _initial(g, cfg):
    if isinstance(cfg.init, dict):
        a = empty_allocation(g.scenario)
        for v, t in cfg.init.items():
            if v not in a:
                raise ValueError(f"initial allocation names unknown variable {v}")
            a[v] = t
        return a
    return pba_init(g) if cfg.init == "pba" else empty_allocation(g.scenario)


def agent_order(g, order=None):
    if order is None:
        return list(g.agents)
    known = set(g.agents)
    order = [tuple(x) if isinstance(x, list) else x for x in order]
    bad = [x for x in order if x not in known]
    if bad or len(set(order)) != len(order):
        raise ValueError(f"invalid agent order entries: {bad or 'duplicates'}")
    listed = set(order)
    return order + [j for j in g.agents if j not in listed]


def default_cap(g):
    s = g.scenario
    return max(1, 10 * s.T * len(s.network.intersections) * len(s.cars))


def _summary(g, j, a):
    return [[v[0], v[1], a.get(v)] for v in g.owned[j]]


def _proposal(g, j, a, counter):
    """(new allocation, old cost, new cost) for j's restricted best response."""
    cand = fastest_feasible(g, j, a, counter)
    moved = dict(a)
    moved.update(cand)
    new = down_reset(g, j, a, moved)
    return new, utility(g, j, a), utility(g, j, new)


def _commit(trace, it, g, j, a, new, delta):
    trace.records.append(UpdateRecord(it, j, _summary(g, j, a), _summary(g, j, new), delta))
    trace.update_counts[j] = trace.update_counts.get(j, 0) + 1


def brudr(g: GameInstance, cfg: SolverConfig):
    if cfg.dsa is not None:
        raise ValueError("configuration requests DSA; call dsa()")
    a = _initial(g, cfg)
    order = agent_order(g, cfg.agent_order)
    cap = cfg.max_iterations or default_cap(g)
    trace = SolveTrace(update_counts={j: 0 for j in g.agents})
    counter = _Counter()
    trace.termination = CAP
    while trace.sweeps < cap:
        trace.sweeps += 1
        changed = False
        if cfg.best_update:
            best = None
            for j in order:
                new, old_u, new_u = _proposal(g, j, a, counter)
                if new_u < old_u:
                    delta = old_u - new_u
                    if best is None or delta > best[0]:
                        best = (delta, j, new)
            if best is not None:
                _commit(trace, trace.sweeps, g, best[1], a, best[2], best[0])
                a = best[2]
                changed = True
        else:
            for j in order:
                new, old_u, new_u = _proposal(g, j, a, counter)
                if new_u < old_u:
                    _commit(trace, trace.sweeps, g, j, a, new, old_u - new_u)
                    a = new
                    changed = True
        if not changed:
            trace.termination = NASH
            break
    trace.evals = counter.n
    return a, trace


def dsa(g: GameInstance, cfg: SolverConfig):
    """Synchronous rounds; each improving agent commits with probability p."""
    if cfg.dsa is None:
        raise ValueError("configuration has no DSA settings")
    rng = np.random.default_rng(cfg.dsa.seed)
    a = _initial(g, cfg)
    order = agent_order(g, cfg.agent_order)
    cap = cfg.dsa.max_rounds or cfg.max_iterations or default_cap(g)
    trace = SolveTrace(update_counts={j: 0 for j in g.agents})
    counter = _Counter()
    trace.termination = CAP
    while trace.sweeps < cap:
        trace.sweeps += 1
        snap = a
        winners = []
        any_proposal = False
        for j in order:
            new, old_u, new_u = _proposal(g, j, snap, counter)
            draw = rng.random()
            if new_u < old_u:
                any_proposal = True
                if draw < cfg.dsa.p:
                    winners.append((j, new))
        if not any_proposal:
            trace.termination = NASH
            break
        for j, new in winners:
            moved = dict(a)
            moved.update({v: new[v] for v in g.owned[j]})
            nxt = down_reset(g, j, a, moved)
            _commit(trace, trace.sweeps, g, j, a, nxt, utility(g, j, a) - utility(g, j, nxt))
            a = nxt
    trace.evals = counter.n
    return a, trace


def solve(g: GameInstance, cfg: SolverConfig):
    return dsa(g, cfg) if cfg.dsa is not None else brudr(g, cfg)


# ---------------------------------------------------------------------------
# Equilibrium checks

def is_nash(g: GameInstance, a, space=RESTRICTED, budget=2_000_000) -> bool:
    if space == RESTRICTED:
        for j in g.agents:
            _, old_u, new_u = _proposal(g, j, a, None)
            if new_u < old_u:
                return False
        return True
    if space != FULL:
        raise ValueError(f"unknown action space {space!r}")
    left = [budget]
    return not any(_improving_deviation(g, j, a, left) for j in g.agents)


def _spend(left):
    left[0] -= 1
    if left[0] < 0:
        raise BudgetExceeded("deviation enumeration budget exhausted")


def _improving_deviation(g, j, a, left) -> bool:
    s = g.scenario
    owned = g.owned[j]
    if not owned:
        return False
    cur = utility(g, j, a)
    b = dict(a)
    if not cur.feasible:
        domain = [None] + list(range(s.T + 1))
        for combo in itertools.product(domain, repeat=len(owned)):
            _spend(left)
            b.update(zip(owned, combo))
            if utility(g, j, b) < cur:
                return True
        return False

    # A strictly better action must itself be violation-free for j, so every
    # owned slot is allocated inside its waiting window.
    delay_cs = [c for c in g.agent_constraints[j] if c.kind == "delay"]

    def rec(n):
        if n == len(owned):
            _spend(left)
            ev = _Evaluator(g, b)
            if sum(ev.wait(v) for c in delay_cs for v in c.vars) >= cur.delay:
                return False
            return utility(g, j, b, ev) < cur
        v = owned[n]
        p = s.prev_var.get(v)
        if p is None:
            base = s.trip[v[1]].depart
        elif b.get(p) is None:
            return False
        else:
            base = b[p] + s.network.edges[(p[0], v[0])]
        for t in range(base, min(s.T, base + s.T_UB) + 1):
            b[v] = t
            if rec(n + 1):
                return True
        b[v] = a.get(v)
        return False

    return rec(0)
