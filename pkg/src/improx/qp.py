"""Exact solver for the proximal cutting-plane subproblem.

Solves ::

    min_{x in X}  max_j { v_j + <s_j, x - y_j> } + mu/2 ||x - center||^2

through its epigraph form in ``(x, r)`` with a primal active-set method.  The
quadratic term is singular in ``r``, but every working set contains at least
one cut (cut multipliers sum to one), which keeps each equality-constrained
step well posed.  Computation happens in coordinates ``d = x - center`` so
that large centers do not cost precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import FeasibleSet, ImproxError, ConfigurationError

__all__ = ["Cut", "QpSolution", "QpInfeasibleError", "QpAccuracyError", "solve_prox_cut_qp"]


class QpInfeasibleError(ImproxError):
    """The feasible set is empty."""


class QpAccuracyError(ImproxError):
    """The iteration cap was hit before the KKT tolerance was met."""

    def __init__(self, message, best=None, residual=math.inf):
        super().__init__(message)
        self.best = best
        self.residual = residual


@dataclass(frozen=True)
class Cut:
    """Affine minorant ``x -> value + <slope, x - anchor>``."""

    anchor: np.ndarray
    value: float
    slope: np.ndarray
    origin: str = "ordinary"

    def __call__(self, x) -> float:
        return self.value + float(self.slope @ (np.asarray(x, dtype=float) - self.anchor))

    def intercept_at(self, center) -> float:
        """Value of the cut at ``center``."""
        return self(center)


@dataclass
class QpSolution:
    x: np.ndarray
    r: float
    cut_multipliers: np.ndarray
    lower_multipliers: np.ndarray
    upper_multipliers: np.ndarray
    linear_multipliers: np.ndarray
    kkt_residual: float
    mu: float
    center: np.ndarray
    iterations: int = 0
    active: tuple = field(default=())

    @property
    def prox_value(self) -> float:
        d = self.x - self.center
        return self.r + 0.5 * self.mu * float(d @ d)

    def aggregate_cut(self) -> Cut:
        """Aggregate linearization ``r + mu <center - x, . - x>`` (a minorant on X)."""
        return Cut(self.x.copy(), self.r, self.mu * (self.center - self.x), "aggregate")


def _dedup(e, S, tol=1e-12):
    """Map every cut to a representative; equal or dominated affine pieces collapse."""
    m = e.size
    scale_s = 1.0 + np.abs(S).max(axis=1)
    same_slope = np.abs(S[:, None, :] - S[None, :, :]).max(axis=2) <= tol * np.maximum.outer(scale_s, scale_s)
    rep = np.arange(m)
    for j in range(m):
        cls = np.flatnonzero(same_slope[j])
        best = cls[np.argmax(e[cls])]  # first maximal intercept
        # near-equal intercepts collapse onto the lowest index among the top
        top = cls[e[cls] >= e[best] - tol * (1.0 + abs(e[best]))]
        rep[j] = top.min()
    return rep


def _feasible_start(X: FeasibleSet, center: np.ndarray, tol: float) -> np.ndarray:
    if X.contains(center, tol):
        return X.clip(center)
    if not X.has_linear:
        return X.clip(center)
    from scipy.optimize import linprog

    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
              for lo, hi in zip(X.lower, X.upper)]
    res = linprog(np.zeros(X.dimension), A_ub=X.A, b_ub=X.b, bounds=bounds, method="highs")
    if res.status == 2:
        raise QpInfeasibleError("feasible set is empty")
    if not res.success:
        raise QpInfeasibleError(f"could not find a feasible point: {res.message}")
    return np.asarray(res.x, dtype=float)


def solve_prox_cut_qp(cuts, mu: float, center, X: FeasibleSet, tol: float | None = None,
                      max_iter: int | None = None) -> QpSolution:
    """Minimize the cutting-plane model plus ``mu/2 ||x - center||^2`` over ``X``.

    Parameters
    ----------
    cuts : sequence of Cut
        Nonempty bundle of affine pieces.
    mu : float
        Prox parameter, ``> 0``.
    center : array_like
        Prox center (should lie in ``X``).
    X : FeasibleSet
    tol : float, optional
        KKT tolerance; defaults to ``1e-9 * (1 + ||center||)``.

    Returns
    -------
    QpSolution
        Minimizer, model value, one multiplier per input cut (duplicates get
        zero), bound/linear multipliers and the achieved KKT residual.
    """
    if not cuts:
        raise ConfigurationError("at least one cut is required")
    if not mu > 0:
        raise ConfigurationError("mu must be positive")
    center = np.asarray(center, dtype=float)
    n = center.size
    if tol is None:
        tol = 1e-9 * (1.0 + float(np.linalg.norm(center)))

    S_all = np.array([c.slope for c in cuts], dtype=float).reshape(len(cuts), n)
    e_all = np.array([c.value + c.slope @ (center - c.anchor) for c in cuts], dtype=float)
    rep = _dedup(e_all, S_all)
    uniq = np.unique(rep)
    S, e = S_all[uniq], e_all[uniq]
    m = uniq.size

    x0 = _feasible_start(X, center, 1e-12 * (1 + np.abs(center).max(initial=0.0)))
    d0 = x0 - center

    # constraint rows a.z <= b with z = (d, r)
    lo_idx = np.flatnonzero(np.isfinite(X.lower))
    hi_idx = np.flatnonzero(np.isfinite(X.upper))
    n_lin = X.A.shape[0] if X.has_linear else 0
    K = m + lo_idx.size + hi_idx.size + n_lin
    A = np.zeros((K, n + 1))
    b = np.zeros(K)
    A[:m, :n], A[:m, n], b[:m] = S, -1.0, -e
    o = m
    A[o + np.arange(lo_idx.size), lo_idx] = -1.0
    b[o:o + lo_idx.size] = -(X.lower[lo_idx] - center[lo_idx])
    o += lo_idx.size
    A[o + np.arange(hi_idx.size), hi_idx] = 1.0
    b[o:o + hi_idx.size] = X.upper[hi_idx] - center[hi_idx]
    o += hi_idx.size
    if n_lin:
        A[o:, :n] = X.A
        b[o:] = X.b - X.A @ center
    row_norm = np.linalg.norm(A, axis=1)

    z = np.concatenate([d0, [np.max(e + S @ d0)]])
    W = [int(np.argmax(e + S @ d0))]
    lam_w = np.ones(1)
    cap = max_iter if max_iter is not None else 20 * (K + n) + 100
    if m == 1 and not n_lin:
        # one affine piece over a box: the prox point is a clipped gradient step
        d = np.clip(-S[0] / mu, X.lower - center, X.upper - center)
        z = np.concatenate([d, [e[0] + S[0] @ d]])
        g = mu * d + S[0]
        lo_rows = [m + i for i, j in enumerate(lo_idx) if d[j] <= X.lower[j] - center[j] and g[j] > 0]
        hi_rows = [m + lo_idx.size + i for i, j in enumerate(hi_idx)
                   if d[j] >= X.upper[j] - center[j] and g[j] < 0]
        W = [0] + lo_rows + hi_rows
        lam_w = np.concatenate([[1.0], g[lo_idx[[r - m for r in lo_rows]]],
                                -g[hi_idx[[r - m - lo_idx.size for r in hi_rows]]]])
        converged, it = True, 0
    else:
        z, W, lam_w, converged, it = _active_set(A, b, row_norm, mu, n, z, W, cap, 1e-2 * tol)

    def assemble(z, W, lam_w):
        return _assemble(z, W, lam_w, K, m, n, e, S, lo_idx, hi_idx, mu, center, X)

    parts = assemble(z, W, lam_w)
    if not converged or parts[-1] > tol:
        # Tangent cuts of a smooth function near its prox point are nearly
        # parallel; the primal path through them is ill-conditioned and can
        # cycle.  An interior-point solve is used instead and the
        # KKT residual of its point certifies it as before.
        guess = _interior_solution(A, b, mu, n)
        if guess is not None:
            parts2 = assemble(*guess)
            if parts2[-1] < parts[-1]:
                parts, converged = parts2, True
    x, r, lam_cut, lam_lo, lam_hi, lam_lin, residual = parts

    full = np.zeros(len(cuts))
    full[uniq] = lam_cut
    active = tuple(int(j) for j in np.flatnonzero(full > 1e-10))
    out = QpSolution(x, r, full, lam_lo, lam_hi, lam_lin, residual, float(mu), center.copy(), it, active)
    if not converged or residual > tol:
        raise QpAccuracyError(
            f"QP stopped after {it} iterations with KKT residual {residual:.3e} (tol {tol:.3e})",
            best=out, residual=residual)
    return out


def _active_set(A, b, row_norm, mu, n, z, W, cap, floor):
    """Primal active-set iterations on ``min mu/2 ||d||^2 + r  s.t.  A z <= b``."""
    W = list(W)
    lam_w = np.zeros(len(W))
    converged = False
    it = 0
    for it in range(1, cap + 1):
        w = len(W)
        Aw = A[W]
        kkt = np.zeros((n + 1 + w, n + 1 + w))
        kkt[np.arange(n), np.arange(n)] = mu
        kkt[: n + 1, n + 1:] = Aw.T
        kkt[n + 1:, : n + 1] = Aw
        g = np.concatenate([mu * z[:n], [1.0]])
        rhs = np.concatenate([-g, b[W] - Aw @ z])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        p, lam_w = sol[: n + 1], sol[n + 1:]

        ap = A @ p
        slack = b - A @ z
        # rows whose step component is at roundoff level relative to the step
        # do not block; admitting them makes the working set singular
        thresh = np.maximum(1e-10 * row_norm * np.linalg.norm(p), floor)
        cand = ap > thresh
        cand[W] = False
        alpha, block = 1.0, -1
        if np.any(cand):
            idx = np.flatnonzero(cand)
            ratios = np.maximum(slack[idx], 0.0) / ap[idx]
            k = int(np.argmin(ratios))
            if ratios[k] < 1.0:
                alpha, block = float(ratios[k]), int(idx[k])
        z = z + alpha * p
        if block >= 0:
            W.append(block)
            continue
        mult_tol = 1e-12 * (1.0 + np.abs(lam_w).max(initial=0.0))
        if lam_w.size == 0 or lam_w.min() >= -mult_tol:
            converged = True
            break
        W.pop(int(np.argmin(lam_w)))
    return z, W, lam_w, converged, it


def _interior_solution(A, b, mu, n):
    """Solve the epigraph QP by an interior-point method, then recover multipliers.

    Returns ``(z, W, lam_w)`` or ``None`` when the solver fails.  Multipliers
    on the nearly active rows come from nonnegative least squares on the
    stationarity equations, which copes with the many nearly dependent cut
    rows that degenerate bundles produce.
    """
    import clarabel
    from scipy import sparse
    from scipy.optimize import nnls

    K = A.shape[0]
    P = sparse.diags(np.r_[np.full(n, mu), 0.0]).tocsc()
    q = np.r_[np.zeros(n), 1.0]
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = settings.tol_gap_rel = settings.tol_feas = 1e-13
    settings.max_iter = 200
    solver = clarabel.DefaultSolver(P, q, sparse.csc_matrix(A), b, [clarabel.NonnegativeConeT(K)], settings)
    res = solver.solve()
    z = np.asarray(res.x, dtype=float)
    if str(res.status) not in ("Solved", "AlmostSolved") or not np.all(np.isfinite(z)):
        return None
    slack = b - A @ z
    y = np.asarray(res.z, dtype=float)
    W = np.flatnonzero((slack <= 1e-7 * (1.0 + np.abs(b))) | (y > 1e-9))
    g = np.r_[mu * z[:n], 1.0]
    lam_w, _ = nnls(A[W].T, -g)
    return z, [int(j) for j in W], lam_w


def _assemble(z, W, lam_w, K, m, n, e, S, lo_idx, hi_idx, mu, center, X):
    """Primal point, multipliers by block, and the KKT residual."""
    lam = np.zeros(K)
    if len(lam_w) == len(W):
        lam[W] = np.maximum(lam_w, 0.0)
    d = z[:n]
    x = center + d
    if not X.has_linear:
        x = X.clip(x)
        d = x - center
    piece_vals = e + S @ d
    r = float(np.max(piece_vals))

    lam_cut = lam[:m]
    o = m
    lam_lo = np.zeros(n)
    lam_lo[lo_idx] = lam[o:o + lo_idx.size]
    o += lo_idx.size
    lam_hi = np.zeros(n)
    lam_hi[hi_idx] = lam[o:o + hi_idx.size]
    o += hi_idx.size
    lam_lin = lam[o:]
    n_lin = lam_lin.size

    stat = mu * d + S.T @ lam_cut - lam_lo + lam_hi
    if n_lin:
        stat = stat + X.A.T @ lam_lin
    viol = max(0.0, float(np.max(X.lower - x, initial=0.0)), float(np.max(x - X.upper, initial=0.0)))
    comp = np.abs(lam_cut * (r - piece_vals)).max(initial=0.0)
    lo_gap = np.where(np.isfinite(X.lower), x - X.lower, 0.0)
    hi_gap = np.where(np.isfinite(X.upper), X.upper - x, 0.0)
    comp = max(comp, float(np.abs(lam_lo * lo_gap).max()), float(np.abs(lam_hi * hi_gap).max()))
    if n_lin:
        lin_slack = X.b - X.A @ x
        viol = max(viol, float(np.max(-lin_slack, initial=0.0)))
        comp = max(comp, float(np.abs(lam_lin * lin_slack).max(initial=0.0)))
    residual = max(float(np.abs(stat).max()), abs(1.0 - float(lam_cut.sum())), viol, comp)
    return x, r, lam_cut, lam_lo, lam_hi, lam_lin, residual
