"""The CMMI game: allocations, waiting times, constraints and lexicographic costs."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np

from .network import Scenario, ScenarioError

FWD, COL, NONE, P2, P1, DELAY = range(6)
COMPONENT_NAMES = ("fwd", "col", "none", "p2", "p1", "delay")

# Which cost component each constraint kind feeds.
COMPONENT = {"fwd": FWD, "col": COL, "alloc": NONE, "dep": P2,
             "wb": P1, "lcap": P1, "arr": P1, "delay": DELAY}


class AgentModel(enum.Enum):
    ATOMIC = "atomic"
    CAR = "car"
    INTERSECTION = "intersection"

    @classmethod
    def parse(cls, x):
        return x if isinstance(x, cls) else cls(str(x).lower())


class CostVector(NamedTuple):
    """Penalty counts in strict priority order; tuple comparison is the ranking."""
    fwd: int = 0
    col: int = 0
    none: int = 0
    p2: int = 0
    p1: int = 0
    delay: int = 0

    def __add__(self, other):
        return CostVector(*(x + y for x, y in zip(self, other)))

    def __sub__(self, other):
        return CostVector(*(x - y for x, y in zip(self, other)))

    @property
    def feasible(self):
        return not any(self[:DELAY])

    def as_dict(self):
        return dict(zip(COMPONENT_NAMES, self))

    @classmethod
    def unit(cls, component, amount=1):
        v = [0] * 6
        v[component] = amount
        return cls(*v)


ZERO = CostVector()


@dataclass(frozen=True)
class Constraint:
    kind: str
    key: tuple
    neighborhood: frozenset
    vars: tuple = ()  # variables the evaluator reads (for col/lcap: unused)

    @property
    def component(self):
        return COMPONENT[self.kind]


# ---------------------------------------------------------------------------
# Allocations

def empty_allocation(s: Scenario) -> dict:
    return {v: None for v in s.variables}


def zero_wait_allocation(s: Scenario, cars=None) -> dict:
    a = empty_allocation(s)
    for k in (s.cars if cars is None else cars):
        t = s.trip[k].depart
        for v in s.car_vars[k]:
            a[v] = t
            t += s.network.edges[s.out_edge[v]]
    return a


def allocation_to_json(a) -> dict:
    return {"slots": [{"i": i, "k": k, "t": a[(i, k)]}
                      for (i, k) in sorted(a, key=lambda v: (v[1], v[0]))]}


# Keys the CLI adds next to the slots; ignored on input.
_ALLOC_KEYS = {"slots", "manifest", "cost", "termination", "delay", "nodes", "status"}


def allocation_from_json(obj, s: Scenario) -> dict:
    if not isinstance(obj, dict) or set(obj) - _ALLOC_KEYS or "slots" not in obj:
        raise ScenarioError("allocation JSON must be an object with a 'slots' list")
    a = empty_allocation(s)
    for n, slot in enumerate(obj["slots"]):
        if not isinstance(slot, dict) or set(slot) != {"i", "k", "t"}:
            raise ScenarioError(f"slots[{n}]: expected fields i, k, t")
        v = (slot["i"], slot["k"])
        if v not in a:
            raise ScenarioError(f"slots[{n}]: {v} is not a variable of the scenario")
        t = slot["t"]
        if t is not None and (not isinstance(t, int) or isinstance(t, bool) or not 0 <= t <= s.T):
            raise ScenarioError(f"slots[{n}]: slot {t!r} outside 0..{s.T}")
        a[v] = t
    return a


def load_allocation(text, s):
    return allocation_from_json(json.loads(text), s)


def _check_var(s, v):
    if v not in s.prev_var and v not in s.out_edge:
        raise KeyError(f"{v} is not a variable of the scenario")


def waiting_time(s: Scenario, a, i, k) -> int:
    v = (i, k)
    _check_var(s, v)
    return _wait(s, a, v)


def _wait(s, a, v):
    t = a.get(v)
    if t is None:
        return 0
    p = s.prev_var.get(v)
    if p is None:
        return t - s.trip[v[1]].depart
    tp = a.get(p)
    if tp is None:
        return 0
    return t - tp - s.network.edges[(p[0], v[0])]


def total_delay(s: Scenario, a) -> int:
    return sum(_wait(s, a, v) for v in s.variables)


def car_delays(s: Scenario, a) -> dict:
    return {k: sum(_wait(s, a, v) for v in s.car_vars[k]) for k in s.cars}


def occupancy_profile(s: Scenario, a, e, release_final_edge=False, exclude=None):
    """K_e^t for every t in 0..T as an int array (optionally ignoring one car)."""
    i, j = e
    diff = np.zeros(s.T + 2, dtype=np.int64)
    for k in s.cars_on_edge.get(e, ()):
        if k == exclude:
            continue
        enter = a.get((i, k))
        if enter is not None:
            diff[enter] += 1
        if (j, k) in s.out_edge:
            leave = a.get((j, k))
            if leave is not None:
                diff[leave] -= 1
        elif release_final_edge and enter is not None:
            leave = enter + s.network.edges[e]
            if leave <= s.T:
                diff[leave] -= 1
    return np.cumsum(diff[:-1])


def edge_occupancy(s: Scenario, a, e, t, release_final_edge=False) -> int:
    if e not in s.network.edges:
        raise KeyError(f"{e} is not an edge")
    if not 0 <= t <= s.T:
        return 0
    return int(occupancy_profile(s, a, e, release_final_edge)[t])


def collision_count(s: Scenario, a, i) -> int:
    by_slot = {}
    for v in s.vars_at.get(i, ()):
        t = a.get(v)
        if t is not None:
            by_slot.setdefault(t, []).append(s.path[v])
    n = 0
    conf = s.conflicts[i]
    for paths in by_slot.values():
        for x in range(len(paths)):
            for y in range(x + 1, len(paths)):
                if frozenset((paths[x], paths[y])) in conf:
                    n += 2
    return n


class _Evaluator:
    """Memoised views of one allocation used while summing constraint costs."""

    def __init__(self, g, a):
        self.s = g.scenario
        self.a = a
        self.release = g.release_final_edge
        self._wait = {}
        self._occ = {}
        self._col = {}

    def wait(self, v):
        w = self._wait.get(v)
        if w is None:
            w = self._wait[v] = _wait(self.s, self.a, v)
        return w

    def occ(self, e):
        o = self._occ.get(e)
        if o is None:
            o = self._occ[e] = occupancy_profile(self.s, self.a, e, self.release)
        return o

    def col(self, i):
        c = self._col.get(i)
        if c is None:
            c = self._col[i] = collision_count(self.s, self.a, i)
        return c

    def violations(self, c: Constraint) -> int:
        """How many of the conditions folded into ``c`` fail."""
        s, a, kind = self.s, self.a, c.kind
        if kind == "wb":
            return sum(not 0 <= self.wait(v) <= s.T_UB for v in c.vars)
        if kind == "lcap":
            t, e = c.key
            return int(self.occ(e)[t] > s.K_UB)
        if kind == "col":
            return self.col(c.key[0]) // 2
        if kind == "alloc":
            return sum(a.get(v) is None for v in c.vars)
        if kind == "fwd":
            return sum(a.get(v) is not None and a.get(s.prev_var[v]) is None
                       for v in c.vars if v in s.prev_var)
        if kind == "dep":
            return sum(a.get(v) is not None and a[v] < s.trip[v[1]].depart for v in c.vars)
        if kind == "arr":
            return sum(a.get(v) is not None and a[v] + s.network.edges[s.out_edge[v]] > s.T
                       for v in c.vars)
        raise ValueError(kind)

    def cost(self, c: Constraint) -> CostVector:
        if c.kind == "delay":
            return CostVector(delay=sum(self.wait(v) for v in c.vars))
        return CostVector.unit(c.component, self.violations(c))


# ---------------------------------------------------------------------------
# Game construction

class GameInstance:
    def __init__(self, scenario: Scenario, agent_model, release_final_edge=False):
        self.scenario = scenario
        self.agent_model = AgentModel.parse(agent_model)
        self.release_final_edge = bool(release_final_edge)
        self.constraints = tuple(_materialize(scenario, self.agent_model))
        index = {j: [] for j in self.agents}
        for n, c in enumerate(self.constraints):
            for j in c.neighborhood:
                index[j].append(n)
        self.agent_constraints = {j: tuple(self.constraints[n] for n in ns)
                                  for j, ns in index.items()}

    @cached_property
    def agents(self):
        s = self.scenario
        if self.agent_model is AgentModel.ATOMIC:
            return tuple(sorted(s.variables))
        if self.agent_model is AgentModel.CAR:
            return s.cars
        return tuple(sorted(s.network.intersections))

    @cached_property
    def owned(self):
        """Variables controlled by each agent, in the order they are decided."""
        s = self.scenario
        if self.agent_model is AgentModel.ATOMIC:
            return {v: (v,) for v in s.variables}
        if self.agent_model is AgentModel.CAR:
            return dict(s.car_vars)
        return {i: s.vars_at.get(i, ()) for i in self.agents}

    @cached_property
    def owner(self):
        return {v: j for j, vs in self.owned.items() for v in vs}


def build_game(s: Scenario, agent_model, release_final_edge=False) -> GameInstance:
    return GameInstance(s, agent_model, release_final_edge)


def _materialize(s: Scenario, model: AgentModel):
    net = s.network
    lcap_keys = [(t, e) for e in sorted(s.cars_on_edge) for t in range(s.T + 1)]
    if model is AgentModel.ATOMIC:
        for v in s.variables:
            p = s.prev_var.get(v)
            nb = frozenset((p, v)) if p else frozenset((v,))
            yield Constraint("delay", v, nb, (v,))
            yield Constraint("wb", v, nb, (v,))
            if p:
                yield Constraint("fwd", v, nb, (v,))
            yield Constraint("alloc", v, frozenset((v,)), (v,))
        for k in s.cars:
            first, last = s.car_vars[k][0], s.car_vars[k][-1]
            yield Constraint("dep", (k,), frozenset((first,)), (first,))
            yield Constraint("arr", (k,), frozenset((last,)), (last,))
        for i in sorted(i for i in net.intersections if s.vars_at.get(i)):
            yield Constraint("col", (i,), frozenset(s.vars_at[i]))
        for t, (i, j) in lcap_keys:
            ks = s.cars_on_edge[(i, j)]
            nb = {(i, k) for k in ks} | {(j, k) for k in ks if (j, k) in s.out_edge}
            yield Constraint("lcap", (t, (i, j)), frozenset(nb))
    elif model is AgentModel.CAR:
        for k in s.cars:
            vs = s.car_vars[k]
            nb = frozenset((k,))
            for kind in ("delay", "wb", "fwd", "alloc"):
                yield Constraint(kind, (k,), nb, vs)
            yield Constraint("dep", (k,), nb, vs[:1])
            yield Constraint("arr", (k,), nb, vs[-1:])
        for i in sorted(i for i in net.intersections if s.vars_at.get(i)):
            yield Constraint("col", (i,), frozenset(k for _, k in s.vars_at[i]))
        for t, e in lcap_keys:
            yield Constraint("lcap", (t, e), frozenset(s.cars_on_edge[e]))
    else:
        # Waiting is charged to the edge a car arrives over; origins get their own entry.
        heads, origins = {}, {}
        for v in s.variables:
            p = s.prev_var.get(v)
            if p:
                heads.setdefault((p[0], v[0]), []).append(v)
            else:
                origins.setdefault(v[0], []).append(v)
        for e in sorted(heads):
            vs = tuple(sorted(heads[e], key=lambda v: v[1]))
            for kind in ("delay", "wb", "fwd"):
                yield Constraint(kind, e, frozenset(e), vs)
        for i in sorted(origins):
            vs = tuple(sorted(origins[i], key=lambda v: v[1]))
            for kind in ("delay", "wb"):
                yield Constraint(kind, (i,), frozenset((i,)), vs)
        for k in s.cars:
            first, last = s.car_vars[k][0], s.car_vars[k][-1]
            yield Constraint("dep", (k,), frozenset((first[0],)), (first,))
            yield Constraint("arr", (k,), frozenset((last[0],)), (last,))
        for i in sorted(net.intersections):
            vs = s.vars_at.get(i, ())
            if not vs:
                continue
            yield Constraint("col", (i,), frozenset((i,)))
            nb = {g for _, k in vs for g in s.trip[k].route[:-1]}
            yield Constraint("alloc", (i,), frozenset(nb), vs)
        for t, e in lcap_keys:
            yield Constraint("lcap", (t, e), frozenset(e))


# ---------------------------------------------------------------------------
# Costs

def constraint_cost(g: GameInstance, c: Constraint, a) -> CostVector:
    return _Evaluator(g, a).cost(c)


def utility(g: GameInstance, j, a, _ev: Optional[_Evaluator] = None) -> CostVector:
    """Cost of agent ``j`` (its utility is the negation)."""
    if j not in g.agent_constraints:
        raise KeyError(f"{j!r} is not an agent")
    ev = _ev or _Evaluator(g, a)
    total = [0] * 6
    for c in g.agent_constraints[j]:
        if c.kind == "delay":
            total[DELAY] += sum(ev.wait(v) for v in c.vars)
        else:
            total[c.component] += ev.violations(c)
    return CostVector(*total)


def social_welfare(g: GameInstance, a) -> CostVector:
    ev = _Evaluator(g, a)
    out = ZERO
    for j in g.agents:
        out = out + utility(g, j, a, ev)
    return out


def is_feasible(g: GameInstance, a) -> bool:
    return social_welfare(g, a).feasible


def violations(s: Scenario, a, release_final_edge=False) -> list:
    """Hard-constraint violations of ``a`` as readable strings (empty when feasible)."""
    out = []
    for v in s.variables:
        t = a.get(v)
        if t is None:
            out.append(f"alloc {v}")
            continue
        p = s.prev_var.get(v)
        if p is not None and a.get(p) is None:
            out.append(f"fwd {v}")
        w = _wait(s, a, v)
        if not 0 <= w <= s.T_UB:
            out.append(f"wb {v} wait={w}")
        if p is None and t < s.trip[v[1]].depart:
            out.append(f"dep {v}")
        if v not in s.next_var and t + s.network.edges[s.out_edge[v]] > s.T:
            out.append(f"arr {v}")
    for i in sorted(s.network.intersections):
        if collision_count(s, a, i):
            out.append(f"col {i}")
    for e in sorted(s.cars_on_edge):
        prof = occupancy_profile(s, a, e, release_final_edge)
        for t in np.nonzero(prof > s.K_UB)[0]:
            out.append(f"lcap {e} t={int(t)}")
    return out


def cost_report(g: GameInstance, a) -> dict:
    return {"social_welfare": social_welfare(g, a).as_dict(),
            "total_delay": total_delay(g.scenario, a),
            "feasible": is_feasible(g, a)}
