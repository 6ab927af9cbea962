"""Road networks, trips, scenarios and their JSON interchange format.

A path through intersection ``i`` is a pair ``(src, dst)`` meaning the car
arrives over edge ``(src, i)`` and leaves over edge ``(i, dst)``.  A departure
path has ``src = None`` (written ``["dep", dst]`` in JSON): the car starts its
trip at ``i`` and enters ``(i, dst)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

Path = tuple  # (src or None, dst)
Var = tuple  # (intersection, car)

ALL_CROSSING = "all_crossing"
FOURWAY = "fourway"

# Offsets are clockwise arm indices relative to the arm a car arrives from.
STRAIGHT, LEFT, RIGHT = 2, 1, 3


class ScenarioError(ValueError):
    """Raised for malformed or (in strict mode) invalid scenario input."""


@dataclass(frozen=True)
class RoadNetwork:
    intersections: tuple
    edges: Mapping  # (i, j) -> travel time L_e
    crossing: Mapping = field(default_factory=dict)  # explicit X_i overrides

    def out_edges(self, i):
        return tuple(sorted(e for e in self.edges if e[0] == i))

    def in_edges(self, i):
        return tuple(sorted(e for e in self.edges if e[1] == i))

    def paths(self, i):
        """Every path through ``i``, departure paths included."""
        outs = [j for _, j in self.out_edges(i)]
        regular = [(src, dst) for src, _ in self.in_edges(i) for dst in outs]
        return tuple(regular + [(None, dst) for dst in outs])

    def crossing_sets(self, i):
        if i in self.crossing:
            return self.crossing[i]
        return default_crossing_sets(self, i, ALL_CROSSING)


@dataclass(frozen=True)
class Trip:
    car_id: int
    route: tuple
    depart: int


@dataclass(frozen=True)
class Scenario:
    network: RoadNetwork
    trips: tuple
    T: int
    T_UB: int
    K_UB: int

    # Derived lookups.  cached_property writes straight into __dict__, which a
    # frozen dataclass permits.

    @cached_property
    def trip(self):
        return {tr.car_id: tr for tr in self.trips}

    @cached_property
    def cars(self):
        return tuple(sorted(self.trip))

    @cached_property
    def variables(self):
        """IK ordered by car, then route position."""
        return tuple((i, tr.car_id) for tr in sorted(self.trips, key=lambda t: t.car_id)
                     for i in tr.route[:-1])

    @cached_property
    def car_vars(self):
        return {tr.car_id: tuple((i, tr.car_id) for i in tr.route[:-1]) for tr in self.trips}

    @cached_property
    def prev_var(self):
        out = {}
        for vs in self.car_vars.values():
            for a, b in zip(vs, vs[1:]):
                out[b] = a
        return out

    @cached_property
    def next_var(self):
        return {b: a for a, b in self.prev_var.items()}

    @cached_property
    def out_edge(self):
        """Edge each variable's car enters when it passes its slot."""
        out = {}
        for tr in self.trips:
            for a, b in zip(tr.route, tr.route[1:]):
                out[(a, tr.car_id)] = (a, b)
        return out

    @cached_property
    def path(self):
        """p_{i,k} for every variable."""
        out = {}
        for tr in self.trips:
            r = tr.route
            for pos in range(len(r) - 1):
                src = r[pos - 1] if pos > 0 else None
                out[(r[pos], tr.car_id)] = (src, r[pos + 1])
        return out

    @cached_property
    def vars_at(self):
        out = {i: [] for i in self.network.intersections}
        for v in self.variables:
            out.setdefault(v[0], []).append(v)
        return {i: tuple(sorted(vs, key=lambda v: v[1])) for i, vs in out.items()}

    @cached_property
    def cars_on_edge(self):
        out = {}
        for tr in self.trips:
            for e in zip(tr.route, tr.route[1:]):
                out.setdefault(e, []).append(tr.car_id)
        return {e: tuple(sorted(ks)) for e, ks in out.items()}

    @cached_property
    def conflicts(self):
        """Per intersection, the set of unordered path pairs that collide.

        Two paths conflict when a crossing set holds both, or when both leave
        over the same edge (covers every departure path and the one-car-per-
        edge-per-slot rule of the MILP).
        """
        out = {}
        for i in self.network.intersections:
            pairs = set()
            for x in self.network.crossing_sets(i):
                xs = sorted(x, key=_path_key)
                for a in range(len(xs)):
                    for b in range(a, len(xs)):
                        pairs.add(frozenset((xs[a], xs[b])))
            for p in self.network.paths(i):
                for q in self.network.paths(i):
                    if p[1] == q[1]:
                        pairs.add(frozenset((p, q)))
            out[i] = frozenset(pairs)
        return out

    def crosses(self, i, p, q):
        return frozenset((p, q)) in self.conflicts[i]

    def effective_crossing_sets(self, i):
        """X_i plus one merge set per outgoing edge (used for MILP rows)."""
        sets = [frozenset(x) for x in self.network.crossing_sets(i)]
        for _, dst in self.network.out_edges(i):
            merge = frozenset(p for p in self.network.paths(i) if p[1] == dst)
            if merge not in sets:
                sets.append(merge)
        return sets

    def without_car(self, k):
        return Scenario(self.network, tuple(t for t in self.trips if t.car_id != k),
                        self.T, self.T_UB, self.K_UB)

    def zero_wait_time(self, k):
        r = self.trip[k].route
        return sum(self.network.edges[e] for e in zip(r, r[1:]))


class ValidationReport(NamedTuple):
    violations: tuple

    @property
    def ok(self):
        return not self.violations


def _path_key(p):
    return (-1 if p[0] is None else p[0], p[1])


def validate_scenario(s: Scenario) -> ValidationReport:
    net = s.network
    nodes = set(net.intersections)
    bad = []
    if len(nodes) != len(net.intersections):
        bad.append("duplicate intersection ids")
    for (i, j), length in sorted(net.edges.items()):
        if i not in nodes or j not in nodes:
            bad.append(f"edge ({i},{j}): undeclared endpoint")
        if i == j:
            bad.append(f"edge ({i},{j}): self loop")
        if not isinstance(length, int) or length < 1:
            bad.append(f"edge ({i},{j}): length {length!r} must be an integer >= 1")
    for i, sets in sorted(net.crossing.items()):
        if i not in nodes:
            bad.append(f"crossing sets for undeclared intersection {i}")
            continue
        for x in sets:
            for src, dst in sorted(x, key=_path_key):
                if (i, dst) not in net.edges or (src is not None and (src, i) not in net.edges):
                    bad.append(f"crossing path {['dep' if src is None else src, dst]} at {i} "
                               f"uses an edge not incident to {i}")
    if s.T < 0:
        bad.append(f"horizon T={s.T} is negative")
    if s.T_UB < 0:
        bad.append(f"T_UB={s.T_UB} is negative")
    if s.K_UB < 1:
        bad.append(f"K_UB={s.K_UB} must be >= 1")
    seen = set()
    for tr in s.trips:
        k = tr.car_id
        if k in seen:
            bad.append(f"car {k}: duplicate car id")
        seen.add(k)
        r = tr.route
        if len(r) < 2:
            bad.append(f"car {k}: route needs at least two intersections")
            continue
        if len(set(r)) != len(r):
            bad.append(f"car {k}: route revisits an intersection")
        missing = [e for e in zip(r, r[1:]) if e not in net.edges]
        for e in missing:
            bad.append(f"car {k}: missing edge {e}")
        for i in r:
            if i not in nodes:
                bad.append(f"car {k}: undeclared intersection {i}")
        if tr.depart < 0:
            bad.append(f"car {k}: negative departure time")
        if tr.depart > s.T:
            bad.append(f"car {k}: departure {tr.depart} after horizon T={s.T}")
        if not missing and tr.depart + s.zero_wait_time(k) > s.T:
            bad.append(f"car {k}: route cannot complete by horizon T={s.T}")
    return ValidationReport(tuple(bad))


def predecessor(trip: Trip, i):
    """gamma(i, k): the intersection before ``i`` on the trip's route."""
    try:
        pos = trip.route.index(i)
    except ValueError:
        raise ValueError(f"intersection {i} is not on the route of car {trip.car_id}") from None
    if pos == 0:
        raise ValueError(f"intersection {i} is the origin of car {trip.car_id}")
    return trip.route[pos - 1]


# ---------------------------------------------------------------------------
# Crossing sets

def _arms(net, i):
    ins = {a for a, _ in net.in_edges(i)}
    outs = {b for _, b in net.out_edges(i)}
    return ins, outs


def fourway_table(arms: Sequence) -> tuple:
    """Crossing sets of a standard 4-way intersection.

    ``arms`` lists the four neighbours clockwise.  Sets are: each straight
    with the two straights crossing it, and each left turn with the opposing
    straight and the opposing left turn.
    """
    def move(a, off):
        return (arms[a % 4], arms[(a + off) % 4])

    sets = []
    for a in range(4):
        sets.append(frozenset({move(a, STRAIGHT), move(a + 1, STRAIGHT), move(a + 3, STRAIGHT)}))
    for a in range(4):
        sets.append(frozenset({move(a, LEFT), move(a + 2, STRAIGHT), move(a + 2, LEFT)}))
    return tuple(sets)


def default_crossing_sets(net: RoadNetwork, i, mode=ALL_CROSSING, arms=None) -> tuple:
    if mode == ALL_CROSSING:
        return (frozenset(net.paths(i)),)
    if mode != FOURWAY:
        raise ValueError(f"unknown crossing mode {mode!r}")
    ins, outs = _arms(net, i)
    if len(ins) != 4 or len(outs) != 4 or ins != outs:
        raise ValueError(f"intersection {i} needs exactly 4 incoming and 4 outgoing edges "
                         f"for fourway crossing sets")
    if arms is None:
        arms = sorted(ins)
    if sorted(arms) != sorted(ins):
        raise ValueError(f"arms {arms} do not match the neighbours of {i}")
    return fourway_table(tuple(arms))


# ---------------------------------------------------------------------------
# JSON

_TOP_KEYS = {"intersections", "edges", "crossing", "trips", "T", "T_UB", "K_UB"}
_REQUIRED = _TOP_KEYS - {"crossing"}


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _need_int(x, where, minimum=None):
    if not _is_int(x):
        raise ScenarioError(f"{where}: expected integer, got {x!r}")
    if minimum is not None and x < minimum:
        raise ScenarioError(f"{where}: must be >= {minimum}, got {x}")
    return x


def _need_list(x, where):
    if not isinstance(x, list):
        raise ScenarioError(f"{where}: expected list, got {type(x).__name__}")
    return x


def _need_keys(obj, where, required, optional=()):
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where}: expected object, got {type(obj).__name__}")
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise ScenarioError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = set(required) - set(obj)
    if missing:
        raise ScenarioError(f"{where}: missing field(s) {sorted(missing)}")


def _parse_path(x, where):
    if not isinstance(x, list) or len(x) != 2:
        raise ScenarioError(f"{where}: path must be [from, to] or [\"dep\", to]")
    src, dst = x
    if src == "dep":
        src = None
    else:
        _need_int(src, where + "[0]")
    return (src, _need_int(dst, where + "[1]"))


def scenario_from_dict(obj, strict=False) -> Scenario:
    _need_keys(obj, "$", _REQUIRED, {"crossing", "manifest"})
    nodes = tuple(_need_int(x, f"$.intersections[{n}]")
                  for n, x in enumerate(_need_list(obj["intersections"], "$.intersections")))
    edges = {}
    for n, e in enumerate(_need_list(obj["edges"], "$.edges")):
        where = f"$.edges[{n}]"
        _need_keys(e, where, ("from", "to", "len"))
        key = (_need_int(e["from"], where + ".from"), _need_int(e["to"], where + ".to"))
        if key in edges:
            raise ScenarioError(f"{where}: duplicate edge {key}")
        edges[key] = _need_int(e["len"], where + ".len", minimum=1)
    crossing = {}
    raw = obj.get("crossing", {})
    if not isinstance(raw, dict):
        raise ScenarioError("$.crossing: expected object")
    for name, sets in raw.items():
        where = f"$.crossing[{name!r}]"
        try:
            i = int(name)
        except ValueError:
            raise ScenarioError(f"{where}: key must be an intersection id") from None
        crossing[i] = tuple(
            frozenset(_parse_path(p, f"{where}[{a}][{b}]")
                      for b, p in enumerate(_need_list(x, f"{where}[{a}]")))
            for a, x in enumerate(_need_list(sets, where)))
    trips = []
    for n, t in enumerate(_need_list(obj["trips"], "$.trips")):
        where = f"$.trips[{n}]"
        _need_keys(t, where, ("id", "route", "depart"))
        route = tuple(_need_int(x, f"{where}.route[{m}]")
                      for m, x in enumerate(_need_list(t["route"], where + ".route")))
        trips.append(Trip(_need_int(t["id"], where + ".id"), route,
                          _need_int(t["depart"], where + ".depart")))
    s = Scenario(RoadNetwork(nodes, edges, crossing), tuple(trips),
                 _need_int(obj["T"], "$.T"), _need_int(obj["T_UB"], "$.T_UB"),
                 _need_int(obj["K_UB"], "$.K_UB"))
    if strict:
        report = validate_scenario(s)
        if not report.ok:
            raise ScenarioError("invalid scenario: " + "; ".join(report.violations))
    return s


def load_scenario(text: str, strict=False) -> Scenario:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return scenario_from_dict(obj, strict=strict)


def _path_json(p):
    return ["dep" if p[0] is None else p[0], p[1]]


def scenario_to_dict(s: Scenario) -> dict:
    net = s.network
    obj = {
        "intersections": sorted(net.intersections),
        "edges": [{"from": i, "to": j, "len": ln} for (i, j), ln in sorted(net.edges.items())],
    }
    if net.crossing:
        obj["crossing"] = {
            str(i): sorted(sorted((_path_json(p) for p in x), key=lambda q: (str(q[0]), q[1]))
                           for x in sets)
            for i, sets in sorted(net.crossing.items())
        }
    obj["trips"] = [{"id": t.car_id, "route": list(t.route), "depart": t.depart}
                    for t in sorted(s.trips, key=lambda t: t.car_id)]
    obj.update(T=s.T, T_UB=s.T_UB, K_UB=s.K_UB)
    return obj


def save_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=1) + "\n"


def make_scenario(edges: Iterable, trips: Iterable, T, T_UB, K_UB,
                  intersections: Optional[Iterable] = None, crossing=None) -> Scenario:
    """Convenience constructor: ``edges`` as (i, j, L), ``trips`` as (k, route, depart)."""
    lengths = {(i, j): ln for i, j, ln in edges}
    if intersections is None:
        intersections = sorted({n for e in lengths for n in e})
    return Scenario(RoadNetwork(tuple(intersections), lengths, dict(crossing or {})),
                    tuple(Trip(k, tuple(r), d) for k, r, d in trips), T, T_UB, K_UB)
