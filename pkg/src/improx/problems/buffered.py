"""Buffered-probability (AVaR) constraints, the cantilever beam-bar instance and a grid baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .._numerics import stable_sum
from ..core import (
    Alternative,
    CompositeProblem,
    ConfigurationError,
    ConvexFnOracle,
    FeasibleSet,
    ImproxError,
    PieceBlock,
    PieceTable,
)
from .scenarios import Distribution, ScenarioSet, sample_scenarios

__all__ = [
    "empirical_avar",
    "AffineLimitStates",
    "BufferedBlock",
    "build_buffered_instance",
    "BeamSpec",
    "beam_limit_states",
    "build_cantilever_instance",
    "GridResult",
    "grid_search",
    "BEAM_GROUPS",
    "buffered_block",
    "buffered_start",
]

TIE_REL = 1e-7


def empirical_avar(values, probs=None, alpha: float = 0.5):
    """Average value-at-risk of a discrete distribution.

    Minimizes ``t + sum_j p_j max(0, v_j - t) / (1 - alpha)`` over ``t``.

    Returns
    -------
    avar : float
        The minimum value.
    t : float
        The leftmost minimizer, i.e. the lower ``alpha``-quantile.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ConfigurationError("empirical_avar needs at least one value")
    if not 0 < alpha < 1:
        raise ConfigurationError("alpha must lie in (0, 1)")
    p = np.full(v.size, 1.0 / v.size) if probs is None else np.asarray(probs, dtype=float).ravel()
    if p.size != v.size or np.any(p < 0):
        raise ConfigurationError("need one nonnegative probability per value")
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(p[order])
    # right derivative at v_(k) is 1 - (1 - cum_k)/(1 - alpha); first k where it is >= 0
    k = int(np.searchsorted(cum, alpha - 1e-12 * max(1.0, alpha), side="left"))
    k = min(k, v.size - 1)
    t = float(v[order[k]])
    excess = p * np.maximum(0.0, v - t)
    return t + stable_sum(excess) / (1.0 - alpha), t


@dataclass(frozen=True, eq=False)
class AffineLimitStates:
    """Limit states ``g_k(y, w_j) = slopes[k] . y + offsets[j, k]``."""

    slopes: np.ndarray
    offsets: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.slopes, dtype=float))
        o = np.atleast_2d(np.asarray(self.offsets, dtype=float))
        if o.shape[1] != s.shape[0]:
            raise ConfigurationError("offsets need one column per limit state")
        object.__setattr__(self, "slopes", s)
        object.__setattr__(self, "offsets", np.ascontiguousarray(o))

    @property
    def dim(self) -> int:
        return self.slopes.shape[1]

    @property
    def count(self) -> int:
        return self.slopes.shape[0]

    def __call__(self, y, k: int) -> np.ndarray:
        return self.offsets[:, k] + float(self.slopes[k] @ np.asarray(y, dtype=float))

    def grouped(self, y, groups) -> list:
        """``G_i = min_{k in groups[i]} g_k`` for each group, one length-N array each."""
        out = []
        for grp in groups:
            acc = self(y, grp[0])
            for k in grp[1:]:
                np.minimum(acc, self(y, k), out=acc)
            out.append(acc)
        return out


class BufferedBlock(PieceBlock):
    """Scenario groups ``w_j max{t, G_1(y, w_j), ..., G_m(y, w_j)}`` with ``w_j = p_j / (1 - alpha)``.

    Decision is ``(y, t)``.  Piece 0 is the convex piece ``w_j t``; pieces
    ``1..m`` are the concave ``w_j G_i`` with ``G_i`` a minimum of affine limit
    states.  The supergradient of ``G_i`` is the slope of the first minimizing
    limit state; other limit states within a relative tie of ``1e-7`` are
    offered as alternatives.
    """

    def __init__(self, limit_states: AffineLimitStates, groups, probs, alpha: float):
        self.ls = limit_states
        self.groups = tuple(tuple(int(k) for k in g) for g in groups)
        self.alpha = float(alpha)
        self.p = np.asarray(probs, dtype=float)
        self.w = self.p / (1.0 - self.alpha)
        self.n_groups = self.w.size
        self.n_pieces = 1 + len(self.groups)
        self.dim = limit_states.dim + 1
        grads = np.zeros((self.dim, self.n_pieces, self.n_groups))
        grads[-1, 0] = self.w
        grads.setflags(write=False)
        self._conv_grads = grads

    def convex(self, x):
        x = np.asarray(x, dtype=float)
        vals = np.zeros((self.n_pieces, self.n_groups))
        vals[0] = self.w * x[-1]
        return vals, self._conv_grads

    def _grouped(self, y):
        """Per group: the limit-state values, their minimum and the first minimizer."""
        out = []
        for grp in self.groups:
            g = [self.ls(y, k) for k in grp]
            gmin = g[0].copy()
            idx = np.zeros(self.n_groups, dtype=np.intp)
            for r in range(1, len(grp)):
                idx = np.where(g[r] < gmin, r, idx)
                np.minimum(gmin, g[r], out=gmin)
            out.append((g, gmin, idx))
        return out

    def values(self, x):
        x = np.asarray(x, dtype=float)
        vals = np.empty((self.n_pieces, self.n_groups))
        vals[0] = self.w * x[-1]
        for i, (_, gmin, _) in enumerate(self._grouped(x[:-1])):
            np.multiply(self.w, gmin, out=vals[1 + i])
        return vals

    def concave(self, x, alternatives=False):
        y = np.asarray(x, dtype=float)[:-1]
        d = self.ls.dim
        vals = np.empty((self.n_pieces, self.n_groups))
        vals[0] = 0.0
        grads = np.empty((self.dim, self.n_pieces, self.n_groups))
        grads[:, 0] = 0.0
        grads[d] = 0.0
        alts = []
        for i, (g, gmin, idx) in enumerate(self._grouped(y)):
            grp = self.groups[i]
            np.multiply(self.w, gmin, out=vals[1 + i])
            slopes = self.ls.slopes[list(grp)]
            for c in range(d):
                col = slopes[:, c]
                if np.all(col == col[0]):
                    np.multiply(self.w, col[0], out=grads[c, 1 + i])
                else:
                    np.multiply(self.w, np.take(col, idx), out=grads[c, 1 + i])
            if alternatives and len(grp) > 1:
                tol = TIE_REL * (1.0 + np.abs(gmin))
                for r in range(len(grp)):
                    near = np.flatnonzero((g[r] - gmin <= tol) & (idx != r))
                    for j in near:
                        grad = np.zeros(self.dim)
                        grad[:d] = self.w[j] * slopes[r]
                        alts.append(Alternative(int(j), 1 + i, grad))
        alts.sort(key=lambda a: (a.piece, a.group))
        return vals, grads, alts

    def xi(self, y) -> np.ndarray:
        """Scenario values ``max_i G_i(y, w_j)``."""
        Gs = self.ls.grouped(y, self.groups)
        acc = Gs[0]
        for G in Gs[1:]:
            np.maximum(acc, G, out=acc)
        return acc

    def avar(self, y):
        return empirical_avar(self.xi(y), self.p, self.alpha)


def build_buffered_instance(limit_states: AffineLimitStates, groups, scenarios: ScenarioSet | np.ndarray,
                            alpha: float, cost, design_lower, design_upper, name: str = "buffered",
                            meta: dict | None = None) -> CompositeProblem:
    """``min cost . y`` subject to ``AVaR_alpha(max_i G_i(y, w)) <= 0`` in epigraph form over ``(y, t)``.

    ``scenarios`` supplies the probabilities (a ScenarioSet, or a probability
    vector); the scenario data themselves live in ``limit_states.offsets``.
    """
    if not groups or any(len(g) == 0 for g in groups):
        raise ConfigurationError("need at least one nonempty limit-state group")
    if not 0 < alpha < 1:
        raise ConfigurationError("alpha must lie in (0, 1)")
    probs = scenarios.probs if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios, dtype=float)
    if probs.size != limit_states.offsets.shape[0]:
        raise ConfigurationError("one probability per scenario row is required")
    d = limit_states.dim
    n = d + 1
    cost = np.asarray(cost, dtype=float)
    X = FeasibleSet(np.append(design_lower, -np.inf), np.append(design_upper, np.inf))
    obj_slope = np.append(cost, 0.0)
    objective = PieceTable([[(ConvexFnOracle.affine(obj_slope, 0.0, "cost"), None)]], n)
    t_slope = np.zeros(n)
    t_slope[-1] = -alpha / (1.0 - alpha)
    t_term = PieceTable([[(ConvexFnOracle.affine(t_slope, 0.0, "t-term"), None)]], n)
    block = BufferedBlock(limit_states, groups, probs, alpha)
    info = {"instance": name, "alpha": float(alpha), "cost": [float(c) for c in cost],
            "N": int(probs.size)}
    info.update(meta or {})
    return CompositeProblem(X, (objective,), (t_term, block), name=name, meta=info)


# ---------------------------------------------------------------------------
# Cantilever beam-bar system

BEAM_GROUPS = ((0, 1), (2, 3), (2, 4))


@dataclass(frozen=True)
class BeamSpec:
    """Cantilever beam-bar data.

    The distribution spreads are read as standard deviations unless
    ``dist_param='var'``.
    """

    L: float = 5.0
    moment: tuple = (0.0, 300.0)
    strength: tuple = (0.0, 20.0)
    load: tuple = (150.0, 30.0)
    dist_param: str = "sd"
    lower: tuple = (500.0, 50.0)
    upper: tuple = (1500.0, 150.0)
    alpha: float = 0.999
    N: int = 100000

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if any(l > u for l, u in zip(self.lower, self.upper)):
            raise ConfigurationError("empty design box")
        if self.N < 1:
            raise ConfigurationError("N must be positive")
        if self.dist_param not in ("sd", "var"):
            raise ConfigurationError("dist_param must be 'sd' or 'var'")

    def distributions(self) -> tuple:
        return tuple(Distribution.from_param(name, m, s, self.dist_param)
                     for name, (m, s) in zip(("w_M", "w_T", "w_P"), (self.moment, self.strength, self.load)))


def beam_limit_states(omega: np.ndarray, L: float = 5.0) -> AffineLimitStates:
    """The five beam-bar limit states for scenario rows ``(w_M, w_T, w_P)``."""
    omega = np.atleast_2d(np.asarray(omega, dtype=float))
    wM, wT, wP = omega[:, 0], omega[:, 1], omega[:, 2]
    slopes = np.array([[0.0, -1.0], [-1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0], [-1.0, -2.0 * L]])
    offsets = np.column_stack([
        -wT + 5.0 / 16.0 * wP,
        -wM + L * wP,
        -wM + 3.0 * L / 8.0 * wP,
        -wM + L / 3.0 * wP,
        -wM - 2.0 * L * wT + L * wP,
    ])
    return AffineLimitStates(slopes, offsets, ("g1", "g2", "g3", "g4", "g5"))


def build_cantilever_instance(spec: BeamSpec = BeamSpec(), seed: int = 42,
                              scenarios: ScenarioSet | None = None) -> CompositeProblem:
    """Beam-bar design with a buffered failure-probability constraint; decision ``(y_M, y_T, t)``."""
    if scenarios is None:
        scenarios = sample_scenarios(spec.distributions(), spec.N, seed)
    ls = beam_limit_states(scenarios.values, spec.L)
    meta = {"seed": scenarios.seed, "dist_param": spec.dist_param, "L": spec.L}
    return build_buffered_instance(ls, BEAM_GROUPS, scenarios, spec.alpha, (2.0, 1.0),
                                   spec.lower, spec.upper, name="beam", meta=meta)


def buffered_block(problem: CompositeProblem) -> BufferedBlock:
    for b in problem.constraint:
        if isinstance(b, BufferedBlock):
            return b
    raise ConfigurationError("problem has no buffered constraint block")


def buffered_start(problem: CompositeProblem, design) -> np.ndarray:
    """Design ``y`` extended by the AVaR minimizer ``t`` at ``y``."""
    design = np.asarray(design, dtype=float)
    _, t = buffered_block(problem).avar(design)
    return np.append(design, t)


@dataclass
class GridResult:
    point: np.ndarray | None
    cost: float
    feasible: bool
    evaluations: int
    shape: tuple
    avar: float = math.nan

    def to_dict(self) -> dict:
        return {"point": None if self.point is None else [float(v) for v in self.point],
                "cost": self.cost, "feasible": self.feasible, "evaluations": self.evaluations,
                "shape": list(self.shape), "avar": self.avar}


def grid_search(problem: CompositeProblem, grid_shape=(1000, 100), monotone: bool = True) -> GridResult:
    """Cheapest point of a uniform grid on the 2-D design box with ``AVaR <= 0``.

    With ``monotone=True`` each column (fixed second coordinate) is searched
    by bisection along the first coordinate.  This is exact when every limit
    state is nonincreasing in the design (nonpositive slopes), which makes
    the AVaR nonincreasing too; otherwise every grid point is evaluated.
    If no grid point is feasible the result has ``feasible=False``.
    """
    block = buffered_block(problem)
    cost = np.asarray(problem.meta["cost"], dtype=float)
    lo, hi = problem.X.lower[:2], problem.X.upper[:2]
    if block.ls.dim != 2 or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ConfigurationError("grid search needs a bounded 2-D design box")
    n1, n2 = (int(s) for s in grid_shape)
    if n1 < 1 or n2 < 1:
        raise ConfigurationError("grid dimensions must be positive")
    g1 = np.linspace(lo[0], hi[0], n1) if n1 > 1 else np.array([lo[0]])
    g2 = np.linspace(lo[1], hi[1], n2) if n2 > 1 else np.array([lo[1]])
    evals = 0

    def feas(i, k):
        nonlocal evals
        evals += 1
        return block.avar(np.array([g1[i], g2[k]]))[0]

    use_bisection = monotone and np.all(block.ls.slopes <= 0) and cost[0] >= 0
    best, best_cost, best_avar = None, math.inf, math.nan
    for k in range(n2):
        if use_bisection:
            if feas(n1 - 1, k) > 0:
                continue
            a, b = -1, n1 - 1  # invariant: b feasible, a infeasible (or before the grid)
            while b - a > 1:
                m = (a + b) // 2
                if feas(m, k) <= 0:
                    b = m
                else:
                    a = m
            cand = [b]
        else:
            cand = [i for i in range(n1) if feas(i, k) <= 0]
        for i in cand:
            c = float(cost @ np.array([g1[i], g2[k]]))
            if c < best_cost:
                best, best_cost = np.array([g1[i], g2[k]]), c
                best_avar = float(block.avar(best)[0])
    if best is None:
        return GridResult(None, math.inf, False, evals, (n1, n2))
    return GridResult(best, best_cost, True, evals, (n1, n2), best_avar)
