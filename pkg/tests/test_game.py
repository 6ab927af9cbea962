import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import FIG2_BAD, FIG2_OPT, jitter_allocation
from cmmi.game import (AgentModel, Constraint, CostVector, allocation_from_json,
                       allocation_to_json, build_game, collision_count, constraint_cost,
                       edge_occupancy, empty_allocation, is_feasible, social_welfare,
                       total_delay, utility, violations, waiting_time)
from cmmi.network import Scenario, Trip, make_scenario
from cmmi.simgen import random_grid_scenario
from cmmi.solver import SolverConfig, brudr


def test_waiting_time_examples(fig2):
    a = dict(FIG2_OPT)
    assert waiting_time(fig2, a, 6, 1) == 0
    assert waiting_time(fig2, a, 5, 1) == 1
    assert waiting_time(fig2, a, 2, 2) == 0
    a[(5, 1)] = None
    assert waiting_time(fig2, a, 5, 1) == 0
    with pytest.raises(KeyError):
        waiting_time(fig2, a, 4, 1)  # destination has no slot


def test_origin_wait_counts():
    s = make_scenario([(1, 2, 2)], [(1, (1, 2), 3)], 10, 5, 1)
    assert waiting_time(s, {(1, 1): 5}, 1, 1) == 2
    assert waiting_time(s, {(1, 1): 1}, 1, 1) == -2


def test_total_delay(fig2):
    assert total_delay(fig2, FIG2_OPT) == 1
    assert total_delay(fig2, FIG2_BAD) == 3
    assert total_delay(fig2, empty_allocation(fig2)) == 0


def test_edge_occupancy_examples(fig2):
    assert edge_occupancy(fig2, FIG2_OPT, (4, 1), 3) == 2
    assert edge_occupancy(fig2, FIG2_OPT, (4, 1), 0) == 0
    s = make_scenario([(1, 2, 5), (2, 3, 5)], [(1, (1, 2, 3), 0)], 20, 5, 1)
    assert edge_occupancy(s, {(1, 1): 2, (2, 1): 7}, (1, 2), 7) == 0
    assert edge_occupancy(s, {(1, 1): 2, (2, 1): 7}, (1, 2), 6) == 1


def test_final_edge_release(fig2):
    # car 1 ends on (5, 4): counted forever unless released after the drive
    assert edge_occupancy(fig2, FIG2_OPT, (5, 4), 20) == 1
    assert edge_occupancy(fig2, FIG2_OPT, (5, 4), 10, release_final_edge=True) == 1
    assert edge_occupancy(fig2, FIG2_OPT, (5, 4), 11, release_final_edge=True) == 0


def test_collision_count_examples(fig2):
    a = empty_allocation(fig2)
    a[(5, 1)] = a[(5, 2)] = 5
    assert collision_count(fig2, a, 5) == 2
    a[(5, 2)] = 6
    assert collision_count(fig2, a, 5) == 0
    assert collision_count(fig2, {(6, 1): 0}, 6) == 0


def test_departure_path_conflicts_only_with_same_exit():
    # intersection 2: car 1 passes 1->2->3, car 2 departs 2->4; custom sets say nothing crosses
    s = make_scenario([(1, 2, 1), (2, 3, 1), (2, 4, 1)], [(1, (1, 2, 3), 0), (2, (2, 4), 1),
                                                         (3, (2, 3), 1)],
                      10, 2, 3, crossing={2: ()})
    a = {(1, 1): 0, (2, 1): 1, (2, 2): 1, (2, 3): 1}
    # car 3 departs onto (2, 3) in the same slot car 1 enters it
    assert collision_count(s, a, 2) == 2
    a[(2, 3)] = 2
    assert collision_count(s, a, 2) == 0


def test_constraint_cost_examples(fig2):
    ga = build_game(fig2, "atomic")
    a = dict(FIG2_OPT)
    a[(5, 1)] = 7
    wb = next(c for c in ga.constraints if c.kind == "wb" and c.key == (5, 1))
    assert wb.neighborhood == {(6, 1), (5, 1)}
    assert constraint_cost(ga, wb, a) == CostVector(0, 0, 0, 0, 1, 0)
    gc = build_game(fig2, "car")
    d2 = next(c for c in gc.constraints if c.kind == "delay" and c.key == (2,))
    assert constraint_cost(gc, d2, FIG2_BAD) == CostVector(delay=1)
    al = next(c for c in gc.constraints if c.kind == "alloc" and c.key == (2,))
    assert constraint_cost(gc, al, FIG2_BAD) == CostVector()


def test_utility_examples(fig2):
    g = build_game(fig2, "car")
    assert utility(g, 1, FIG2_OPT) == CostVector(delay=1)
    assert utility(g, 3, FIG2_OPT) == CostVector()
    for model in AgentModel:
        gm = build_game(fig2, model)
        for j in gm.agents:
            u = utility(gm, j, empty_allocation(fig2))
            assert u.fwd == 0
            if gm.owned[j]:
                assert u.none > 0


def test_social_welfare_examples(fig2):
    g = build_game(fig2, "car")
    sw = social_welfare(g, FIG2_OPT)
    assert sw.feasible and sw.delay == 1 == total_delay(fig2, FIG2_OPT)
    assert social_welfare(build_game(fig2, "atomic"), FIG2_OPT).delay == 2
    a = dict(FIG2_OPT)
    a[(5, 1)] = 5
    assert not is_feasible(g, a)


def test_neighbourhoods_by_model(fig2):
    ga = build_game(fig2, "atomic")
    by = {(c.kind, c.key): c.neighborhood for c in ga.constraints}
    assert by[("delay", (5, 2))] == {(7, 2), (5, 2)}
    assert by[("delay", (7, 2))] == {(7, 2)}
    assert by[("col", (5,))] == {(5, 1), (5, 2)}
    assert by[("lcap", (3, (5, 2)))] == {(5, 2), (2, 2)}
    gc = build_game(fig2, "car")
    by = {(c.kind, c.key): c.neighborhood for c in gc.constraints}
    assert by[("wb", (2,))] == {2}
    assert by[("col", (2,))] == {2, 3, 4}
    assert by[("lcap", (0, (2, 3)))] == {2, 3, 4}
    gi = build_game(fig2, "intersection")
    by = {(c.kind, c.key): c.neighborhood for c in gi.constraints}
    assert by[("wb", (5, 2))] == {5, 2}
    assert by[("lcap", (0, (4, 1)))] == {4, 1}
    assert by[("col", (5,))] == {5}
    assert by[("arr", (2,))] == {2}
    assert by[("dep", (3,))] == {4}


@pytest.mark.parametrize("model", list(AgentModel))
def test_constraint_index_is_exact(fig2, model):
    g = build_game(fig2, model)
    for j in g.agents:
        assert set(g.agent_constraints[j]) == {c for c in g.constraints if j in c.neighborhood}
    covered = {v for c in g.constraints if c.kind == "alloc" for v in c.vars}
    assert covered == set(fig2.variables)
    owned = [v for vs in g.owned.values() for v in vs]
    assert sorted(owned) == sorted(fig2.variables)


def test_allocation_json_roundtrip(fig2):
    a = dict(FIG2_OPT)
    a[(2, 4)] = None
    assert allocation_from_json(allocation_to_json(a), fig2) == a


def test_counts_of_aggregated_violations(fig2):
    g = build_game(fig2, "car")
    a = empty_allocation(fig2)
    assert utility(g, 2, a).none == 3
    a[(5, 1)] = a[(5, 2)] = 5
    a[(2, 3)] = a[(2, 2)] = 3
    assert utility(g, 2, a).col == 2  # one pair at 5, one at 2


# ---------------------------------------------------------------------------
# properties

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 1000))
def test_cost_helpers_match_oracle(seed, aseed):
    s = random_grid_scenario(seed, K=5)
    a = jitter_allocation(s, aseed, p_none=0.15, spread=2)
    for k in s.cars:
        assert [waiting_time(s, a, *v) for v in s.car_vars[k]] == oracles.waits(s, a, k)
    assert total_delay(s, a) == oracles.delay(s, a)
    for i in s.network.intersections:
        assert collision_count(s, a, i) == oracles.collisions(s, a, i)
    for e in s.cars_on_edge:
        for t in range(0, s.T + 1, 3):
            assert edge_occupancy(s, a, e, t) == oracles.occupancy(s, a, e, t)
            assert edge_occupancy(s, a, e, t, True) == oracles.occupancy(s, a, e, t, True)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 1000), st.booleans())
def test_feasibility_agrees_across_models(seed, aseed, release):
    s = random_grid_scenario(seed, K=4)
    a = jitter_allocation(s, aseed, p_none=0.05, spread=1)
    expected = oracles.feasible(s, a, release)
    assert (not violations(s, a, release)) == expected
    for model in AgentModel:
        assert is_feasible(build_game(s, model, release), a) == expected


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_car_welfare_equals_total_delay(seed):
    s = random_grid_scenario(seed, K=5)
    g = build_game(s, "car")
    a, _ = brudr(g, SolverConfig("car"))
    sw = social_welfare(g, a)
    assert sw.feasible
    assert sw.delay == total_delay(s, a)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 1000))
def test_shifting_a_car_adds_one(seed, aseed):
    s = random_grid_scenario(seed, K=4)
    a = jitter_allocation(s, aseed, p_none=0.0, spread=1)
    k = s.cars[aseed % len(s.cars)]
    if max(a[v] for v in s.car_vars[k]) >= s.T:
        return
    b = dict(a)
    for v in s.car_vars[k]:
        b[v] += 1
    assert total_delay(s, b) == total_delay(s, a) + 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 1000), st.randoms())
def test_collision_count_symmetric_under_relabel(seed, aseed, rnd):
    s = random_grid_scenario(seed, K=5)
    a = jitter_allocation(s, aseed, p_none=0.1, spread=1)
    ids = list(s.cars)
    new = ids[:]
    rnd.shuffle(new)
    mp = dict(zip(ids, new))
    s2 = Scenario(s.network, tuple(Trip(mp[t.car_id], t.route, t.depart) for t in s.trips),
                  s.T, s.T_UB, s.K_UB)
    a2 = {(i, mp[k]): t for (i, k), t in a.items()}
    for i in s.network.intersections:
        assert collision_count(s, a, i) == collision_count(s2, a2, i)


costs = st.tuples(*[st.integers(0, 50)] * 6).map(lambda t: CostVector(*t))


@given(costs, costs)
def test_fwd_dominates_everything(x, y):
    x0 = CostVector(0, *x[1:])
    worse = y._replace(fwd=y.fwd + 1)
    assert x0 < worse


@given(costs, costs)
def test_cost_vector_arithmetic(x, y):
    assert (x + y) - y == x
    assert (x + y).feasible == (x.feasible and y.feasible)


def test_constraint_component_mapping():
    expect = {"delay": 5, "wb": 4, "lcap": 4, "arr": 4, "dep": 3, "col": 1, "fwd": 0, "alloc": 2}
    for kind, comp in expect.items():
        assert Constraint(kind, (), frozenset()).component == comp
