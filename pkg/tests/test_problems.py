import math

import numpy as np
import pytest

from improx.core import ConfigurationError
from improx.models import build_summax_family
from improx.problems import (
    FOUR_NODE_TREE,
    AffineLimitStates,
    BeamSpec,
    GasTree,
    ScenarioSet,
    beam_limit_states,
    buffered_block,
    buffered_start,
    build_buffered_instance,
    build_cantilever_instance,
    build_gas_instance,
    empirical_avar,
    gas_start,
    grid_search,
    pressure_drops,
    sigmoid,
    sigmoid_derivative,
)


def avar_objective(t, v, p, alpha):
    return t + float(p @ np.maximum(0.0, v - t)) / (1 - alpha)


# --- sigmoid -----------------------------------------------------------------


def test_sigmoid_examples():
    assert sigmoid(0.0, 0.1) == 0.5
    assert sigmoid(0.1, 0.1) == pytest.approx(1 / (1 + math.exp(-1)), rel=1e-15)
    assert sigmoid(0.1, 0.1) == pytest.approx(0.731059, abs=1e-6)
    tiny = sigmoid(-50.0, 0.1)
    assert 0.0 < tiny < 1e-200 and not math.isnan(tiny)
    assert sigmoid(50.0, 0.1) == 1.0


def test_sigmoid_monotone_and_derivative():
    z = np.sort(np.random.default_rng(60).normal(scale=2.0, size=2000))
    s = sigmoid(z, 0.3)
    assert np.all(np.diff(s) >= 0) and np.all((s >= 0) & (s <= 1))
    h = 1e-6
    fd = (sigmoid(z + h, 0.3) - sigmoid(z - h, 0.3)) / (2 * h)
    np.testing.assert_allclose(sigmoid_derivative(z, 0.3), fd, atol=1e-8)
    np.testing.assert_allclose(sigmoid_derivative(z, 0.3), s * (1 - s) / 0.3, atol=1e-15)
    # away from zero the smoothed indicator is within 0.5 of the step function
    assert np.all(np.abs((z > 0) - s)[np.abs(z) > 0.3] < 0.5)
    with pytest.raises(ConfigurationError):
        sigmoid(0.0, 0.0)


# --- gas ---------------------------------------------------------------------


def test_gas_tree_validation_and_structure():
    t = FOUR_NODE_TREE
    assert t.path(3) == [1, 3] and sorted(t.subtree(1)) == [1, 2, 3]
    with pytest.raises(ConfigurationError):
        GasTree((0, 0))
    with pytest.raises(ConfigurationError):
        GasTree((-1, 2, 1))
    with pytest.raises(ConfigurationError):
        GasTree((-1, 0), resistance=(0.0, -1.0))


def test_pressure_drops_by_hand():
    loads = np.array([[1.0, 2.0, 3.0]])
    h = pressure_drops(FOUR_NODE_TREE, loads)
    # edge into 1 carries 6, edges into 2 and 3 carry 2 and 3
    np.testing.assert_allclose(h, [[0.0, 36.0, 40.0, 45.0]])


def test_gas_zero_load_scenario():
    S = ScenarioSet(np.zeros((1, 3)))
    P = build_gas_instance(FOUR_NODE_TREE, 1, theta=0.1, alpha=0.05, scenarios=S)
    assert P.c(np.ones(4)) == pytest.approx(0.5 - 0.05)
    assert P.f(np.ones(4)) == 4.0
    assert P.c(np.full(4, 1e3)) == pytest.approx(-0.05, abs=1e-15)


def test_gas_instance_gradients_and_start():
    P = build_gas_instance(FOUR_NODE_TREE, 200, seed=1)
    block = P.constraint[0]
    x = np.array([2.0, 1.5, 1.3, 1.2])
    vals, grads, _ = block.concave(x)
    h = 1e-6
    for l in range(4):
        e = np.zeros(4)
        e[l] = h
        fd = (block.concave(x + e)[0] - block.concave(x - e)[0]) / (2 * h)
        np.testing.assert_allclose(grads[l], fd, atol=1e-7)
    x0 = gas_start(P)
    assert P.X.contains(x0) and P.c(x0) < 0
    with pytest.raises(ConfigurationError):
        build_gas_instance(FOUR_NODE_TREE, 10, alpha=1.5)


# --- AVaR and buffered constraints --------------------------------------------


def test_avar_examples():
    assert empirical_avar([3.0, 3.0, 3.0], alpha=0.9) == (3.0, 3.0)
    assert empirical_avar([1, 2, 3, 4], alpha=0.5)[0] == pytest.approx(3.5)
    assert empirical_avar([1, 2, 3, 4], alpha=0.75)[0] == pytest.approx(4.0)
    assert empirical_avar([1, 2, 3, 4], alpha=0.5)[1] == 2.0
    with pytest.raises(ConfigurationError):
        empirical_avar([], alpha=0.5)


def test_avar_matches_exhaustive_minimum():
    rng = np.random.default_rng(61)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        v = rng.normal(size=n) * 10
        p = rng.dirichlet(np.ones(n))
        a = float(rng.uniform(0.01, 0.99))
        val, t = empirical_avar(v, p, a)
        grid = np.concatenate([v, np.linspace(v.min() - 1, v.max() + 1, 2001)])
        ref = min(avar_objective(s, v, p, a) for s in grid)
        assert val == pytest.approx(ref, rel=1e-9, abs=1e-12)
        assert avar_objective(t, v, p, a) == pytest.approx(val, rel=1e-12, abs=1e-12)


def test_avar_bounds_violation_probability():
    rng = np.random.default_rng(62)
    for _ in range(200):
        v = rng.normal(loc=-2.0, size=50)
        a = float(rng.uniform(0.5, 0.99))
        if empirical_avar(v, alpha=a)[0] <= 0:
            assert np.mean(v > 0) <= 1 - a + 1e-12


def _single_scenario_instance():
    ls = AffineLimitStates(np.zeros((1, 1)), np.array([[-1.0]]))
    return build_buffered_instance(ls, ((0,),), np.array([1.0]), 0.8, [1.0], [0.0], [1.0])


def test_buffered_single_scenario_by_hand():
    P = _single_scenario_instance()
    ts = np.linspace(-3, 2, 501)
    cs = [P.c(np.array([0.5, t])) for t in ts]
    assert min(cs) == pytest.approx(-1.0) and ts[int(np.argmin(cs))] == pytest.approx(-1.0)
    assert P.c(np.array([0.5, -1.0])) == pytest.approx(-0.8 / 0.2 * -1 + -1 / 0.2)


def test_buffered_constraint_equals_avar_at_argmin_and_is_convex_in_t():
    P = build_cantilever_instance(BeamSpec(N=5000), seed=3)
    block = buffered_block(P)
    rng = np.random.default_rng(63)
    for _ in range(10):
        y = np.array([rng.uniform(500, 1500), rng.uniform(50, 150)])
        avar, t = block.avar(y)
        assert P.c(np.append(y, t)) == pytest.approx(avar, rel=1e-10, abs=1e-9)
        ts = t + np.linspace(-50, 50, 41)
        cs = np.array([P.c(np.append(y, s)) for s in ts])
        assert np.all(cs[1:-1] <= 0.5 * (cs[:-2] + cs[2:]) + 1e-9 * (1 + np.abs(cs[1:-1])))
        assert cs.min() >= avar - 1e-9 * (1 + abs(avar))


def test_buffered_alternatives_at_ties():
    # two limit states tied in the scenario: both slopes are offered
    ls = AffineLimitStates(np.array([[-1.0], [-2.0]]), np.array([[0.0, 1.0]]))
    P = build_buffered_instance(ls, ((0, 1),), np.array([1.0]), 0.5, [1.0], [0.0], [5.0])
    x = np.array([1.0, 0.0])
    fam = build_summax_family(P, x, tuple_cap=4)
    assert len(fam) == 2
    assert fam.indices[1] == ("c", 1, 0, 1)


def test_buffered_validation():
    ls = AffineLimitStates(np.zeros((1, 1)), np.zeros((2, 1)))
    with pytest.raises(ConfigurationError):
        build_buffered_instance(ls, (), np.array([0.5, 0.5]), 0.5, [1.0], [0.0], [1.0])
    with pytest.raises(ConfigurationError):
        build_buffered_instance(ls, ((0,),), np.array([1.0]), 0.5, [1.0], [0.0], [1.0])


# --- beam ----------------------------------------------------------------------


def test_beam_limit_states_by_hand():
    ls = beam_limit_states(np.array([[0.0, 0.0, 160.0]]))
    y = np.array([1000.0, 100.0])
    g = [ls(y, k)[0] for k in range(5)]
    assert g[0] == pytest.approx(-50.0) and g[1] == pytest.approx(-200.0)
    assert g[2] == pytest.approx(-1000 + 15 / 8 * 160) and g[3] == pytest.approx(-1000 + 5 / 3 * 160)
    assert g[4] == pytest.approx(-1000 - 1000 + 800)
    assert ls.grouped(y, ((0, 1),))[0][0] == pytest.approx(-200.0)


def test_beam_cost_and_over_designed_corner():
    P = build_cantilever_instance(BeamSpec(N=20000), seed=5)
    assert P.f(np.array([1288.0, 150.0, 0.0])) == 2726.0
    avar, _ = buffered_block(P).avar(np.array([1500.0, 150.0]))
    assert avar < 0
    x0 = buffered_start(P, [500.0, 50.0])
    assert x0[2] == buffered_block(P).avar(np.array([500.0, 50.0]))[1]
    assert P.c(x0) > 0


def test_beam_variance_reading():
    sd = BeamSpec().distributions()
    var = BeamSpec(dist_param="var").distributions()
    assert [d.sd for d in sd] == [300.0, 20.0, 30.0]
    assert [d.sd for d in var] == pytest.approx([math.sqrt(300), math.sqrt(20), math.sqrt(30)])


# --- grid search -------------------------------------------------------------


def _corner_instance():
    ls = AffineLimitStates(np.array([[-1.0, -1.0]]), np.full((3, 1), 1.5))
    return build_buffered_instance(ls, ((0,),), np.full(3, 1 / 3), 0.9, [1.0, 1.0], [0.0, 0.0], [1.0, 1.0])


@pytest.mark.parametrize("monotone", [True, False])
def test_grid_forced_corner(monotone):
    r = grid_search(_corner_instance(), (2, 2), monotone=monotone)
    assert r.feasible and list(r.point) == [1.0, 1.0] and r.cost == 2.0


def test_grid_infeasible():
    ls = AffineLimitStates(np.array([[-1.0, -1.0]]), np.full((1, 1), 5.0))
    P = build_buffered_instance(ls, ((0,),), np.ones(1), 0.9, [1.0, 1.0], [0.0, 0.0], [1.0, 1.0])
    r = grid_search(P, (3, 3))
    assert not r.feasible and r.point is None and r.cost == math.inf
    assert r.to_dict()["point"] is None


def test_grid_bisection_matches_exhaustive_and_nesting():
    P = build_cantilever_instance(BeamSpec(N=3000), seed=7)
    fast, slow = grid_search(P, (41, 11)), grid_search(P, (41, 11), monotone=False)
    assert fast.cost == slow.cost and np.array_equal(fast.point, slow.point)
    assert fast.evaluations < slow.evaluations
    fine = grid_search(P, (101, 21))
    coarse = grid_search(P, (51, 11))
    coarser = grid_search(P, (26, 6))
    assert fine.cost <= coarse.cost <= coarser.cost
