import math

import numpy as np
import pytest

from improx.bundle import InnerSolverError
from improx.core import ConfigurationError, ConvexFnOracle, FeasibleSet, CompositeProblem
from improx.models import build_dc_family, build_summax_family
from improx.prox import CONVERGED, MAX_ITER, OuterParams, PreconditionError, criticality_residual, solve
from improx.problems import dc_toy_instance

from conftest import pl_model, smooth_convex_problem, weakly_concave_problem

DC_PARAMS = OuterParams(inner_tol=1e-12)


def dc_builder(p, c):
    return build_dc_family(p, c)


def check_trace_invariants(rep, params):
    """Feasibility persistence, sufficient descent at serious steps, mu schedule, eps guard."""
    tr = rep.trace
    assert len(tr) == rep.iterations and rep.serious_steps <= rep.iterations
    shrink = 0.5 * (params.kappa - params.lam)
    seen_feasible = False
    for a, b in zip(tr, tr[1:] + [None]):
        nxt = (b["x"], b["f"], b["c"], b["mu"]) if b else (rep.x, rep.f, rep.c, rep.mu_final)
        seen_feasible |= a["c"] <= 0
        if seen_feasible:
            assert nxt[2] <= 0
        assert a["eps"] <= 0.5 * params.lam * a["step"] ** 2 * (1 + 1e-12) + 1e-15
        if a["serious"]:
            d2 = float((nxt[0] - a["x"]) @ (nxt[0] - a["x"]))
            if a["c"] <= 0:
                assert nxt[1] <= a["f"] - shrink * d2 + 1e-9 * (1 + abs(a["f"]))
            else:
                assert nxt[2] <= a["c"] - shrink * d2 + 1e-9 * (1 + abs(a["c"]))
            assert nxt[3] == a["mu"]
        else:
            np.testing.assert_array_equal(nxt[0], a["x"])
            assert nxt[3] >= a["mu"] + params.delta


def test_starting_at_the_minimizer_stops_immediately():
    P = smooth_convex_problem([1.0, -2.0], radius=5.0)
    rep = solve(P, build_summax_family, [1.0, -2.0])
    assert rep.status == CONVERGED and rep.iterations == 0 and rep.final_step <= 1e-6


def test_dc_toy_from_0_9_reaches_half():
    rep = solve(dc_toy_instance(), dc_builder, [0.9], DC_PARAMS)
    assert rep.converged and abs(rep.x[0] - 0.5) <= 1e-6
    check_trace_invariants(rep, DC_PARAMS)
    assert rep.criticality_residual <= 1e-6


def test_smooth_constrained_problem():
    # min ||x - (3, 0)||^2 s.t. ||x||^2 <= 1 from an infeasible start: solution (1, 0)
    P = smooth_convex_problem([3.0, 0.0], radius=1.0)
    params = OuterParams(tol=1e-7)
    rep = solve(P, build_summax_family, [2.0, 2.0], params)
    assert rep.converged
    np.testing.assert_allclose(rep.x, [1.0, 0.0], atol=1e-5)
    assert rep.c <= 1e-9
    check_trace_invariants(rep, params)


@pytest.mark.parametrize("seed", [50, 51, 52, 53, 54])
def test_weakly_concave_problem_invariants(seed):
    P = weakly_concave_problem(seed=seed, freq=4.0)
    params = OuterParams()
    rep = solve(P, build_summax_family, [2.5, -2.0], params)
    assert rep.converged and rep.iterations > 0 and rep.c <= 0
    assert rep.criticality_residual <= 1e-5
    check_trace_invariants(rep, params)
    # consecutive null steps stay bounded by the doubling schedule
    run = worst = 0
    for e in rep.trace:
        run = 0 if e["serious"] else run + 1
        worst = max(worst, run)
    mu_hat = max(e["mu"] for e in rep.trace)
    assert worst <= math.ceil((mu_hat + params.kappa - params.mu0) / params.delta)


def test_tight_inner_tolerance_sharpens_the_stop():
    # a value gap of Tol in the inner center test allows a displacement of about
    # sqrt(2 Tol / mu), so the final point can sit visibly off a critical point
    P = weakly_concave_problem(seed=55, freq=4.0)
    loose = solve(P, build_summax_family, [2.5, -2.0], OuterParams())
    tight = solve(P, build_summax_family, [2.5, -2.0], OuterParams(inner_tol=1e-12))
    assert tight.criticality_residual <= 1e-5 < loose.criticality_residual
    check_trace_invariants(tight, OuterParams(inner_tol=1e-12))


def test_rho_defaults_from_start_and_is_recorded():
    P = smooth_convex_problem([3.0, 0.0], radius=1.0)
    x0 = np.array([2.0, 2.0])
    rep = solve(P, build_summax_family, x0, OuterParams(max_iter=1), certify=False)
    assert rep.rho == pytest.approx(abs(P.f(x0)) / (1 + abs(P.c(x0))))


def test_max_iter_status_and_report():
    P = smooth_convex_problem([3.0, 0.0], radius=1.0)
    rep = solve(P, build_summax_family, [2.0, 2.0], OuterParams(max_iter=2), certify=False)
    assert rep.status == MAX_ITER and rep.iterations == 2 and not rep.converged
    d = rep.to_dict(timing=False)
    assert "timing" not in d and d["null_steps"] == rep.null_steps
    assert '"status": "max_iter"' in rep.to_json(timing=False)


def test_start_outside_x_is_rejected():
    P = smooth_convex_problem([0.0, 0.0])
    with pytest.raises(PreconditionError):
        solve(P, build_summax_family, [20.0, 0.0])


def test_inner_abort_carries_trace():
    P = weakly_concave_problem(seed=52)
    with pytest.raises(InnerSolverError) as err:
        solve(P, build_summax_family, np.zeros(2), OuterParams(tol=0.0, inner_max_iter=1))
    assert "trace" in err.value.result


def test_callback_sees_every_entry():
    seen = []
    rep = solve(dc_toy_instance(), dc_builder, [0.9], DC_PARAMS, callback=seen.append)
    assert len(seen) == rep.iterations


@pytest.mark.parametrize("kw", [dict(kappa=1.0), dict(lam=0.3), dict(mu0=0.1), dict(gamma=1.0),
                                dict(delta=0.0), dict(tol=-1.0), dict(max_iter=0)])
def test_outer_params_validation(kw):
    with pytest.raises(ConfigurationError):
        OuterParams(**kw)


def test_outer_params_defaults_and_mu_rule():
    p = OuterParams()
    assert p.mu0 == p.kappa == p.delta == 0.3
    assert p.next_mu(0.3) == 0.6 and p.next_mu(0.1) == pytest.approx(0.4)
    assert p.inner.tol == p.tol and OuterParams(inner_tol=1e-12).inner.tol == 1e-12


def test_criticality_residual_examples():
    dc = dc_toy_instance().with_rho(0.0)
    builder = lambda c: build_dc_family(dc, c, 0.0)
    assert criticality_residual(builder, [0.5], 1.0) <= 1e-6
    # at 0 both active models x^2 +- x have prox points -+1/3 for mu_probe = 1
    assert criticality_residual(builder, [0.0], 1.0) == pytest.approx(1.0 / 3.0, abs=1e-8)
    # and the displacement tends to the unregularized minimizers -+1/2 as mu_probe -> 0
    assert criticality_residual(builder, [0.0], 1e-6) == pytest.approx(0.5, abs=1e-5)
    with pytest.raises(ConfigurationError):
        criticality_residual(builder, [0.0], 0.0)


def test_criticality_residual_zero_at_convex_minimizer():
    X = FeasibleSet.box([-1.0, -1.0], [1.0, 1.0])
    model = pl_model([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]], [0.0, 0.0, 0.0, 0.0])

    class Fam:
        models = [model]
        X = FeasibleSet.box([-1.0, -1.0], [1.0, 1.0])
        H_center = 0.0
        center = np.zeros(2)

        def active_indices(self, tol):
            return [0]

    assert criticality_residual(lambda c: Fam(), np.zeros(2), 1.0) == 0.0
