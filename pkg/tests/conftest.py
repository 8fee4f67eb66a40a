import numpy as np
import pytest

from improx.core import CompositeProblem, ConvexFnOracle, FeasibleSet, OuterMap, PieceTable, WeaklyConcaveOracle
from improx.models import DCProblem
from improx.problems import dc_toy_instance


def smooth_convex_problem(center, radius=5.0):
    """``f = ||x - center||^2`` with ``c = ||x||^2 - radius^2`` on a wide box."""
    center = np.asarray(center, dtype=float)
    n = center.size
    X = FeasibleSet.box(np.full(n, -10.0), np.full(n, 10.0))
    f = ConvexFnOracle(lambda x: (float((x - center) @ (x - center)), 2 * (x - center)), "dist")
    c = ConvexFnOracle(lambda x: (float(x @ x) - radius ** 2, 2 * x), "ball")
    return CompositeProblem.from_pieces(X, [[(f, None)]], [[(c, None)]])


def weakly_concave_problem(seed=0, n=2, freq=1.0):
    """Sum-max problem with smooth weakly-concave parts (``-a ||x - b||^2`` and ``sin``)."""
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(3, n))
    w = rng.normal(size=n) * freq

    def neg_quad(bb, a):
        return WeaklyConcaveOracle(lambda x: (-a * float((x - bb) @ (x - bb)), [-2 * a * (x - bb)]))

    sinw = WeaklyConcaveOracle(lambda x: (float(np.sin(w @ x)), [np.cos(w @ x) * w]))
    abs1 = ConvexFnOracle(lambda x: (float(np.abs(x).sum()), np.sign(x)))
    lin = ConvexFnOracle.affine(rng.normal(size=n), 0.5)
    X = FeasibleSet.box(np.full(n, -3.0), np.full(n, 3.0))
    f_groups = [[(abs1, neg_quad(b[0], 0.3)), (lin, sinw)], [(None, neg_quad(b[1], 0.1))]]
    abs_shift = ConvexFnOracle(lambda x: (float(np.abs(x).sum()) - 1.0, np.sign(x)))
    c_groups = [[(lin, neg_quad(b[2], 0.2)), (abs_shift, None)]]
    # the sine piece is the only one with upward curvature, at most ||w||^2
    return CompositeProblem.from_pieces(X, f_groups, c_groups, rho=0.7,
                                        meta={"w": w})


@pytest.fixture
def dc_toy():
    return dc_toy_instance()


def pl_model(A, b):
    """Convex piecewise-linear model ``y -> max_i A[i] @ y + b[i]`` with a subgradient."""
    A, b = np.atleast_2d(A), np.asarray(b, dtype=float)

    def model(y):
        v = A @ y + b
        i = int(np.argmax(v))
        return float(v[i]), A[i].copy()

    return model


def random_pl_instance(rng, max_pieces=8, max_dim=5):
    n = int(rng.integers(1, max_dim + 1))
    k = int(rng.integers(2, max_pieces + 1))
    A = rng.normal(size=(k, n)) * 2
    b = rng.normal(size=k)
    lo = -rng.uniform(0.5, 3.0, n)
    X = FeasibleSet.box(lo, lo + rng.uniform(1.0, 5.0, n))
    center = X.clip(rng.normal(size=n))
    mu = float(rng.uniform(0.3, 3.0))
    return A, b, X, center, mu


def concave_quad(b, a):
    b = np.asarray(b, dtype=float)
    return WeaklyConcaveOracle(lambda x: (-a * float((x - b) @ (x - b)), [-2 * a * (x - b)]), concave=True)


def composite_problem(seed=0, n=2, outer=OuterMap.hinge()):
    rng = np.random.default_rng(seed)
    X = FeasibleSet.box(np.full(n, -2.0), np.full(n, 2.0))
    sq = ConvexFnOracle(lambda x: (float(x @ x), 2 * x))
    f_groups = [[(sq, concave_quad(rng.normal(size=n), 0.4))],
                [(ConvexFnOracle.affine(rng.normal(size=n), 0.3), concave_quad(rng.normal(size=n), 0.2))]]
    c_groups = [[(ConvexFnOracle.affine(rng.normal(size=n), -0.5), concave_quad(rng.normal(size=n), 0.3))],
                [(None, concave_quad(rng.normal(size=n), 0.1))]]
    n_ = X.dimension
    return CompositeProblem(X, (PieceTable(f_groups, n_),), (PieceTable(c_groups, n_),),
                            objective_outer=outer, constraint_outer=outer, rho=0.5)


def random_dc(seed=0, n=2, mf=3, mc=2):
    rng = np.random.default_rng(seed)
    X = FeasibleSet.box(np.full(n, -2.0), np.full(n, 2.0))
    f1 = ConvexFnOracle(lambda x: (float(x @ x), 2 * x))
    c1 = ConvexFnOracle(lambda x: (float(np.abs(x).sum()) - 1.0, np.sign(x)))
    fp = tuple(concave_quad(rng.normal(size=n), rng.uniform(0.05, 0.5)) for _ in range(mf))
    cp = tuple(WeaklyConcaveOracle.affine(rng.normal(size=n), rng.normal()) for _ in range(mc))
    return DCProblem(X, f1, fp, c1, cp, rho=0.3)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
