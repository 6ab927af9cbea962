"""Scenario generators: grids, Poisson demand, named fixtures and JSP-shaped instances."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .network import (ALL_CROSSING, FOURWAY, RoadNetwork, Scenario, Trip,
                      default_crossing_sets, load_scenario, make_scenario)

FIXTURE_VERSION = "v1"
FIXTURE_NAMES = ("fig2", "fig2_extended(N)", "appendixH", "jsp_small")


def fixture_dir() -> Path:
    env = os.environ.get("CMMI_FIXTURE_DIR")
    if env:
        return Path(env)
    return Path(__file__).resolve().parent / "fixtures" / FIXTURE_VERSION


# ---------------------------------------------------------------------------
# Grids

def grid_network(rows: int, cols: int, edge_len: int = 5, crossing_mode: str = ALL_CROSSING) -> RoadNetwork:
    """Bidirectional 4-connected grid with row-major ids starting at 1."""
    if rows < 1 or cols < 1 or edge_len < 1:
        raise ValueError("rows, cols and edge_len must be >= 1")
    node = lambda r, c: r * cols + c + 1
    edges = {}
    for r in range(rows):
        for c in range(cols):
            for dr, dc in ((0, 1), (1, 0)):
                r2, c2 = r + dr, c + dc
                if r2 < rows and c2 < cols:
                    edges[(node(r, c), node(r2, c2))] = edge_len
                    edges[(node(r2, c2), node(r, c))] = edge_len
    ids = tuple(node(r, c) for r in range(rows) for c in range(cols))
    net = RoadNetwork(ids, edges, {})
    if crossing_mode == ALL_CROSSING:
        return net
    if crossing_mode != FOURWAY:
        raise ValueError(f"unknown crossing mode {crossing_mode!r}")
    crossing = {}
    for r in range(1, rows - 1):
        for c in range(1, cols - 1):
            i = node(r, c)
            arms = (node(r - 1, c), node(r, c + 1), node(r + 1, c), node(r, c - 1))  # N E S W
            crossing[i] = default_crossing_sets(net, i, FOURWAY, arms)
    return RoadNetwork(ids, edges, crossing)


def grid_path(rows, cols, src, dst, rng) -> tuple:
    """A random monotone (shortest) path between two grid nodes."""
    r, c = divmod(src - 1, cols)
    r2, c2 = divmod(dst - 1, cols)
    moves = [(1 if r2 > r else -1, 0)] * abs(r2 - r) + [(0, 1 if c2 > c else -1)] * abs(c2 - c)
    moves = [moves[n] for n in rng.permutation(len(moves))]
    out = [src]
    for dr, dc in moves:
        r, c = r + dr, c + dc
        out.append(r * cols + c + 1)
    return tuple(out)


# ---------------------------------------------------------------------------
# Demand

@dataclass(frozen=True)
class DemandSpec:
    routes: tuple  # ((route, rate), ...)
    K: int
    seed: int

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.routes:
            raise ValueError("at least one route is required")
        for route, rate in self.routes:
            if not rate > 0:
                raise ValueError(f"rate for route {route} must be positive")


def poisson_demand(net: RoadNetwork, spec: DemandSpec, T: Optional[int] = None) -> list:
    """Per-step Poisson arrivals on each route until exactly K cars exist."""
    for route, _ in spec.routes:
        for e in zip(route, route[1:]):
            if e not in net.edges:
                raise ValueError(f"route {route} uses missing edge {e}")
    total_rate = sum(rate for _, rate in spec.routes)
    if T is not None and spec.K / total_rate > T:
        raise ValueError(f"expected {spec.K / total_rate:.1f} steps to reach K={spec.K} "
                         f"exceeds horizon T={T}")
    rng = np.random.default_rng(spec.seed)
    trips = []
    t = 0
    while len(trips) < spec.K:
        for route, rate in spec.routes:
            n = int(rng.poisson(rate))
            for _ in range(n):
                if len(trips) < spec.K:
                    trips.append(Trip(len(trips) + 1, tuple(route), t))
        t += 1
    return trips


def demand_to_json(spec: DemandSpec, trips) -> str:
    body = {"spec": {"routes": [{"route": list(r), "rate": rate} for r, rate in spec.routes],
                     "K": spec.K, "seed": spec.seed},
            "trips": [{"id": t.car_id, "route": list(t.route), "depart": t.depart} for t in trips]}
    return json.dumps(body, indent=1) + "\n"


def golden_demand_spec() -> DemandSpec:
    """Two corner-to-corner routes on the 3x3 grid; pinned in the fixtures."""
    return DemandSpec((((1, 2, 3), 0.2), ((7, 4, 1), 0.2)), K=10, seed=7)


def nonbinding_scenario(net: RoadNetwork, trips: Sequence, margin: int = 5) -> Scenario:
    """Wrap trips with T, T_UB and K_UB chosen so none of those bounds can bind.

    A car blocked by every other car still finds a free slot within K - 1
    steps of its earliest time at each intersection; the horizon leaves room
    for that on every hop.
    """
    trips = tuple(trips)
    k = max(1, len(trips))
    longest = 0
    steps = 0
    for tr in trips:
        travel = sum(net.edges[e] for e in zip(tr.route, tr.route[1:]))
        longest = max(longest, tr.depart + travel)
        steps = max(steps, len(tr.route) - 1)
    T = longest + steps * (k - 1) + margin
    return Scenario(net, trips, T, k - 1, k)


def random_grid_scenario(seed, rows=3, cols=3, K=8, edge_len=2, n_routes=4, rate=0.5,
                         crossing_mode=ALL_CROSSING) -> Scenario:
    rng = np.random.default_rng(seed)
    net = grid_network(rows, cols, edge_len, crossing_mode)
    n = rows * cols
    routes = []
    while len(routes) < n_routes:
        src, dst = (int(x) + 1 for x in rng.choice(n, size=2, replace=False))
        routes.append(grid_path(rows, cols, src, dst, rng))
    demand = DemandSpec(tuple((r, rate) for r in routes), K, int(rng.integers(2**63)))
    return nonbinding_scenario(net, poisson_demand(net, demand))


# ---------------------------------------------------------------------------
# Fixtures

def _fig2_base():
    return load_scenario((fixture_dir() / "fig2.json").read_text())


def fig2_extended(n: int) -> Scenario:
    """``n`` cars: the original two plus ``n - 2`` followers leaving intersection 4."""
    if n < 2:
        raise ValueError("fig2_extended needs at least 2 cars")
    base = _fig2_base()
    trips = [t for t in base.trips if t.car_id <= 2]
    trips += [Trip(k, (4, 1, 2, 3), k - 2) for k in range(3, n + 1)]
    return Scenario(base.network, tuple(trips), n + 16, base.T_UB, n)


def jsp_scenario(jobs: Sequence, T: Optional[int] = None) -> Scenario:
    """Job shop with unit tasks: machines are intersections, jobs are cars.

    Every job ends at a shared sink node.  Hops take one step, so the total
    delay equals the sum of finishing times minus the number of tasks.
    """
    machines = sorted({m for job in jobs for m in job})
    sink = max(machines) + 1
    edges = set()
    trips = []
    for k, job in enumerate(jobs, start=1):
        route = tuple(job) + (sink,)
        edges.update(zip(route, route[1:]))
        trips.append((k, route, 0))
    if T is None:
        T = sum(len(job) for job in jobs) + 1
    return make_scenario([(i, j, 1) for i, j in sorted(edges)], trips, T, T, len(jobs),
                         intersections=machines + [sink])


def fixture(name: str) -> Scenario:
    name = name.strip()
    for prefix in ("fig2_extended:", "fig2_extended(", "fig2_extended"):
        if name.startswith(prefix) and name != "fig2":
            arg = name[len(prefix):].rstrip(")")
            if arg.strip().isdigit():
                return fig2_extended(int(arg))
    path = fixture_dir() / f"{name}.json"
    if not name or "/" in name or not path.is_file():
        raise KeyError(f"unknown fixture {name!r}; known: {', '.join(FIXTURE_NAMES)}")
    return load_scenario(path.read_text())


def load_fourway_table():
    return json.loads((fixture_dir() / "fourway_table.json").read_text())
