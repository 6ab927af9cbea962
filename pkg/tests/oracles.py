"""Slow reference implementations written straight from the model definitions.

Nothing here imports the game, solver or exact modules; only the plain
scenario data classes are read.
"""

import itertools
import random

from cmmi.network import RoadNetwork, Scenario, Trip


def car_vars(s, k):
    r = s.trip[k].route
    return [(r[n], k) for n in range(len(r) - 1)]


def hop(s, k, n):
    r = s.trip[k].route
    return s.network.edges[(r[n], r[n + 1])]


def waits(s, a, k):
    """Waiting times along car k's route (0 wherever a needed slot is missing)."""
    vs = car_vars(s, k)
    out = []
    for n, v in enumerate(vs):
        t = a.get(v)
        if t is None:
            out.append(0)
        elif n == 0:
            out.append(t - s.trip[k].depart)
        elif a.get(vs[n - 1]) is None:
            out.append(0)
        else:
            out.append(t - a[vs[n - 1]] - hop(s, k, n - 1))
    return out


def delay(s, a):
    return sum(sum(waits(s, a, k)) for k in s.trip)


def path_of(s, k, n):
    r = s.trip[k].route
    return (r[n - 1] if n > 0 else None, r[n + 1])


def all_paths(net, i):
    ins = [a for (a, b) in net.edges if b == i]
    outs = [b for (a, b) in net.edges if a == i]
    return [(x, y) for x in ins for y in outs] + [(None, y) for y in outs]


def crossing_sets(net, i):
    if i in net.crossing:
        return [set(x) for x in net.crossing[i]]
    return [set(all_paths(net, i))]


def conflict(net, i, p, q):
    if p[1] == q[1]:
        return True
    return any(p in x and q in x for x in crossing_sets(net, i))


def collisions(s, a, i):
    items = []
    for k in s.trip:
        for n, v in enumerate(car_vars(s, k)):
            if v[0] == i and a.get(v) is not None:
                items.append((k, a[v], path_of(s, k, n)))
    return sum(1 for x in items for y in items
               if x[0] != y[0] and x[1] == y[1] and conflict(s.network, i, x[2], y[2]))


def occupancy(s, a, e, t, release=False):
    i, j = e
    n = 0
    for k, tr in s.trip.items():
        r = tr.route
        if e not in zip(r, r[1:]):
            continue
        enter = a.get((i, k))
        if enter is not None and enter <= t:
            n += 1
        if j != r[-1]:
            leave = a.get((j, k))
            if leave is not None and leave <= t:
                n -= 1
        elif release and enter is not None and enter + s.network.edges[e] <= t:
            n -= 1
    return n


def feasible(s, a, release=False):
    for k, tr in s.trip.items():
        vs = car_vars(s, k)
        if any(a.get(v) is None for v in vs):
            return False
        if a[vs[0]] < tr.depart:
            return False
        if any(not 0 <= w <= s.T_UB for w in waits(s, a, k)):
            return False
        if a[vs[-1]] + hop(s, k, len(vs) - 1) > s.T:
            return False
    for i in s.network.intersections:
        if collisions(s, a, i):
            return False
    used = {e for tr in s.trips for e in zip(tr.route, tr.route[1:])}
    for e in used:
        for t in range(s.T + 1):
            if occupancy(s, a, e, t, release) > s.K_UB:
                return False
    return True


def car_schedules(s, k):
    """Every timing of car k over the full grid that passes its own constraints."""
    vs = car_vars(s, k)
    tr = s.trip[k]
    out = []
    for ts in itertools.product(range(s.T + 1), repeat=len(vs)):
        if ts[0] < tr.depart or ts[0] - tr.depart > s.T_UB:
            continue
        ok = all(0 <= ts[n] - ts[n - 1] - hop(s, k, n - 1) <= s.T_UB for n in range(1, len(vs)))
        if ok and ts[-1] + hop(s, k, len(vs) - 1) <= s.T:
            out.append(dict(zip(vs, ts)))
    return out


def brute_min_delay(s, release=False):
    """Minimum total delay over all complete assignments, or None if none is feasible."""
    cars = sorted(s.trip)
    options = [car_schedules(s, k) for k in cars]
    best = [None]

    def rec(n, a):
        if n == len(cars):
            if feasible(s, a, release):
                d = delay(s, a)
                if best[0] is None or d < best[0]:
                    best[0] = d
            return
        for sched in options[n]:
            b = dict(a)
            b.update(sched)
            if _partial_ok(s, b, cars[: n + 1], release):
                rec(n + 1, b)

    rec(0, {})
    return best[0]


def _partial_ok(s, a, cars, release):
    sub = Scenario(s.network, tuple(s.trip[k] for k in cars), s.T, s.T_UB, s.K_UB)
    return feasible(sub, a, release)


def jsp_min_total_finish(jobs):
    """Unit-time job shop: each machine runs one task per step, tasks in job order."""
    horizon = sum(len(j) for j in jobs)
    best = None
    per_job = []
    for job in jobs:
        opts = [ts for ts in itertools.combinations(range(horizon), len(job))]
        per_job.append(opts)
    for combo in itertools.product(*per_job):
        busy = set()
        ok = True
        for job, ts in zip(jobs, combo):
            for m, t in zip(job, ts):
                if (m, t) in busy:
                    ok = False
                    break
                busy.add((m, t))
            if not ok:
                break
        if ok:
            total = sum(ts[-1] + 1 for ts in combo)
            best = total if best is None else min(best, total)
    return best


def tiny_scenario(seed):
    """Random instance with at most 3 cars, 3 route steps and T <= 20."""
    rng = random.Random(seed)
    n = rng.randint(3, 4)
    nodes = list(range(1, n + 1))
    edges = {}
    for a in nodes:
        for b in nodes:
            if a != b and rng.random() < 0.5:
                edges[(a, b)] = rng.randint(1, 3)
    # a guaranteed line so every instance has routes
    for a in range(1, n):
        edges.setdefault((a, a + 1), rng.randint(1, 3))
    trips = []
    for k in range(1, (1 if rng.random() < 0.1 else rng.randint(2, 3)) + 1):
        for _ in range(50):
            length = rng.randint(2, 4)
            route = [rng.choice(nodes)]
            while len(route) < length:
                nxt = [b for (a, b) in edges if a == route[-1] and b not in route]
                if not nxt:
                    break
                route.append(rng.choice(nxt))
            if len(route) >= 2:
                break
        trips.append(Trip(k, tuple(route), rng.randint(0, 2)))
    crossing = {}
    net0 = RoadNetwork(tuple(nodes), edges, {})
    for i in nodes:
        ps = all_paths(net0, i)
        if ps and rng.random() < 0.4:
            crossing[i] = tuple(frozenset(rng.sample(ps, rng.randint(1, len(ps))))
                                for _ in range(rng.randint(0, 2)))
    need = max(tr.depart + sum(edges[e] for e in zip(tr.route, tr.route[1:])) for tr in trips)
    T = min(20, need + rng.randint(1, 6))
    return Scenario(RoadNetwork(tuple(nodes), edges, crossing), tuple(trips), T,
                    rng.randint(0, 3), rng.randint(1, 2))
