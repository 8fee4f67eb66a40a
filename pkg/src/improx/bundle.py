"""Prox-form bundle method for one convex model, and candidate selection.

For a convex model ``M_a(.; x)`` the inner loop builds cutting-plane
approximations ``Hhat <= M_a`` and solves the prox subproblem on them until
either the center is (nearly) optimal or the latest QP point is an
``eps``-solution with ``eps <= lam/2 ||y - center||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import ConfigurationError, FeasibleSet, ImproxError, OracleError
from .qp import Cut, QpAccuracyError, QpSolution, solve_prox_cut_qp

__all__ = [
    "InnerParams",
    "InnerResult",
    "CutCollection",
    "InnerSolverError",
    "inner_solve",
    "update_cuts",
    "select_candidate",
]

CENTER_OPTIMAL = "center_optimal"
EPS_SOLUTION = "eps_solution"
ITERATION_CAP = "iteration_cap"


class InnerSolverError(ImproxError):
    """The inner bundle loop could not deliver a usable candidate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class InnerParams:
    lam: float = 0.1
    tol: float = 1e-6
    max_iter: int = 500
    max_cuts: int = 100
    kappa: float | None = None
    qp_tol: float | None = None  # KKT tolerance of the cut QPs (None: QP default)

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError("lam must be nonnegative")
        if self.kappa is not None and not self.lam < self.kappa:
            raise ConfigurationError("lam must be smaller than kappa")
        if self.tol < 0:
            raise ConfigurationError("tol must be nonnegative")
        if self.max_cuts < 2:
            raise ConfigurationError("max_cuts must be at least 2")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be positive")


class CutCollection(Sequence):
    """Ordered bundle of cuts, oldest first."""

    def __init__(self, cuts=()):
        self._cuts = list(cuts)

    def __getitem__(self, i):
        return self._cuts[i]

    def __len__(self):
        return len(self._cuts)

    def __repr__(self):
        return f"CutCollection({len(self)} cuts)"

    def value(self, x) -> float:
        """Cutting-plane model ``max_j cut_j(x)``."""
        return max(c(x) for c in self._cuts)


@dataclass
class InnerResult:
    y: np.ndarray
    eps: float
    status: str
    iterations: int
    cuts: CutCollection
    gap: float = np.inf
    model_value: float = np.nan
    qp_point: np.ndarray | None = None
    stalled: bool = False
    active_cuts: tuple = ()

    @property
    def usable(self) -> bool:
        return self.status in (CENTER_OPTIMAL, EPS_SOLUTION)


def _same_affine(a: Cut, b: Cut, center, tol=1e-12) -> bool:
    sa, sb = a.slope, b.slope
    scale = 1.0 + max(np.abs(sa).max(initial=0.0), np.abs(sb).max(initial=0.0))
    if np.abs(sa - sb).max(initial=0.0) > tol * scale:
        return False
    va, vb = a(center), b(center)
    return abs(va - vb) <= tol * (1.0 + abs(va))


def update_cuts(cuts: Sequence[Cut], qp_sol: QpSolution, new_cut: Cut, cap: int) -> CutCollection:
    """Next bundle: old cuts plus ``new_cut``, trimmed to ``cap``.

    Inactive cuts are evicted oldest-first.  If the active cuts alone still
    overflow, they are collapsed into the aggregate linearization of the last
    QP, which keeps the model above the aggregate on ``X``.
    """
    if cap < 2:
        raise ConfigurationError("cut cap must be at least 2")
    center = qp_sol.center
    items = list(cuts)
    active = set(qp_sol.active)
    if not any(_same_affine(c, new_cut, center) for c in items):
        items.append(new_cut)
        new_idx = len(items) - 1
    else:
        new_idx = None

    keep = list(range(len(items)))
    inactive = [i for i in keep if i not in active and i != new_idx]
    while len(keep) > cap and inactive:
        keep.remove(inactive.pop(0))
    if len(keep) > cap:
        tail = [items[new_idx]] if new_idx is not None else []
        return CutCollection([qp_sol.aggregate_cut()] + tail)
    return CutCollection(items[i] for i in keep)


def inner_solve(model: Callable, center, mu: float, params: InnerParams, X: FeasibleSet,
                callback: Callable | None = None, initial_cuts: Sequence[Cut] = ()) -> InnerResult:
    """Approximately minimize ``model(.) + mu/2 ||. - center||^2`` over ``X``.

    ``model(y)`` returns ``(value, subgradient)``.  ``callback(m, cuts, qp_sol)``
    is invoked after every QP, mainly for tests.  ``initial_cuts`` may carry
    minorants of the same model from an earlier call (e.g. the ``active_cuts``
    of a previous prox center); they are kept alongside the cut at the new
    center.  If they leave the first QP degenerate, the call restarts without
    them.
    """
    if not mu > 0:
        raise ConfigurationError("mu must be positive")
    center = np.asarray(center, dtype=float)
    m_center, s0 = model(center)
    if not np.isfinite(m_center) or not np.all(np.isfinite(s0)):
        raise OracleError("model returned non-finite output at the center")
    first = Cut(center.copy(), float(m_center), np.asarray(s0, dtype=float))
    old = [c for c in initial_cuts if not _same_affine(c, first, center)][-(params.max_cuts - 1):]
    cuts = CutCollection(old + [first])
    half_lam = 0.5 * params.lam
    last = None
    for m in range(params.max_iter):
        try:
            sol = solve_prox_cut_qp(list(cuts), mu, center, X, tol=params.qp_tol)
        except QpAccuracyError:
            if not old:
                raise
            return inner_solve(model, center, mu, params, X, callback)
        kept = tuple(cuts[j] for j in sol.active)
        if callback is not None:
            callback(m, cuts, sol)
        y, h_y = sol.x, sol.r
        gap = m_center - h_y
        if gap <= params.tol:
            eps = max(0.0, m_center - sol.prox_value)
            return InnerResult(center.copy(), eps, CENTER_OPTIMAL, m + 1, cuts, gap, m_center, y,
                               active_cuts=kept)
        m_y, s_y = model(y)
        if not np.isfinite(m_y) or not np.all(np.isfinite(s_y)):
            raise OracleError("model returned non-finite output")
        eps = max(0.0, m_y - h_y)
        d = y - center
        if eps <= half_lam * float(d @ d):
            return InnerResult(y, eps, EPS_SOLUTION, m + 1, cuts, gap, m_y, y, active_cuts=kept)
        new_cut = Cut(y.copy(), float(m_y), np.asarray(s_y, dtype=float))
        if any(_same_affine(c, new_cut, center) for c in cuts):
            # The model at y is already in the bundle, so the next QP would
            # repeat this one; the remaining eps is rounding in the model sums.
            return InnerResult(y, eps, EPS_SOLUTION, m + 1, cuts, gap, m_y, y, stalled=True,
                               active_cuts=kept)
        last = InnerResult(y, eps, ITERATION_CAP, m + 1, cuts, gap, m_y, y, active_cuts=kept)
        cuts = update_cuts(cuts, sol, new_cut, params.max_cuts)
    return last


def select_candidate(results: Mapping, family, center, mu: float):
    """Pick the candidate with the lowest ``M(y_a) + mu/2 ||y_a - center||^2``.

    ``family.value(y)`` must return ``min_a M_a(y)``.  Ties within ``1e-12``
    (relative) go to the lowest index.  Returns ``(a_star, y, eps)`` where
    ``eps`` is the smallest inexactness over all candidates.
    """
    if not results:
        raise ImproxError("no inner results to select from")
    if len(results) == 1:
        (a, res), = results.items()
        return a, res.y, res.eps
    center = np.asarray(center, dtype=float)
    best_a, best_val = None, np.inf
    for a in sorted(results):
        y = results[a].y
        d = y - center
        val = family.value(y) + 0.5 * mu * float(d @ d)
        if best_a is None or val < best_val - 1e-12 * (1.0 + abs(best_val)):
            best_a, best_val = a, val
    eps = min(r.eps for r in results.values())
    return best_a, results[best_a].y, eps
