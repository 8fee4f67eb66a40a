"""Convex models of the improvement function and their families.

A family at a center ``x`` is a finite list of convex functions ``M_a(.; x)``
whose pointwise minimum models ``H(.; x)``.  Three builders are provided:

* :func:`build_summax_family` linearizes every weakly-concave piece of a
  sum-max problem at ``x`` (one model per subgradient tuple);
* :func:`build_composite_family` does the same inside convex nondecreasing
  outer maps;
* :func:`build_dc_family` uses the epsilon-active pieces of a DC problem whose
  concave parts are minima of smooth concave functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._numerics import chunked_map, stable_sum, stable_sum_rows
from .bundle import InnerParams, inner_solve
from .core import (
    CompositeProblem,
    ConfigurationError,
    ContractError,
    ConvexFnOracle,
    FeasibleSet,
    ImproxError,
    OracleError,
    OuterMap,
    PieceTable,
    WeaklyConcaveOracle,
    group_max,
    side_total,
    tau_f,
)

__all__ = [
    "ConvexModel",
    "ModelFamily",
    "EpsActiveSets",
    "DCProblem",
    "ConstraintQualificationError",
    "build_summax_family",
    "build_composite_family",
    "build_dc_family",
    "eps_active_sets",
    "check_b_stationarity",
    "default_dc_eps",
]


class ConstraintQualificationError(ImproxError):
    """The linearized B-stationarity subproblem has no feasible point."""


class ConvexModel:
    """One convex model ``M_a(.; x)``: callable returning ``(value, subgradient)``."""

    index = None
    center: np.ndarray

    def __call__(self, y):
        raise NotImplementedError

    def value(self, y) -> float:
        return self(y)[0]


@dataclass
class ModelFamily:
    center: np.ndarray
    indices: list
    models: list
    X: FeasibleSet
    H_center: float
    kind: str = "summax"

    def __len__(self):
        return len(self.models)

    def value(self, y) -> float:
        """``M(y; x) = min_a M_a(y; x)``."""
        return min(m(y)[0] for m in self.models)

    def active_indices(self, rel_tol: float = 1e-9) -> list[int]:
        """Positions ``a`` with ``M_a(x; x) = H(x; x)`` up to a relative tie tolerance."""
        tol = rel_tol * (1.0 + abs(self.H_center))
        return [i for i, m in enumerate(self.models) if abs(m(self.center)[0] - self.H_center) <= tol]


# ---------------------------------------------------------------------------
# Sum-max and composite models


@dataclass
class _SideData:
    blocks: tuple
    c2: list          # per block (G, P)
    grads: list       # per block (n, G, P)
    outer: OuterMap | None


def _linearize_side(blocks, outer, x, alternatives):
    """Concave parts at ``x`` plus the side value ``f(x)`` computed from the same arrays."""
    c2s, grads, alts, totals = [], [], [], []
    for bi, block in enumerate(blocks):
        vals, g, al = block.concave(x, alternatives)
        if not np.all(np.isfinite(group_max(vals))) or not np.all(np.isfinite(g)):
            raise OracleError("non-finite concave-part output", bi)
        c2s.append(vals)
        grads.append(g)
        alts.extend((bi, a) for a in al)
        conv = block.convex(x)
        totals.append(side_total(vals if conv is None else vals + conv[0], outer, bi))
    return c2s, grads, alts, math.fsum(totals)


class LinearizedModel(ConvexModel):
    """``max{ F(y) - tau, C(y) }`` with weakly-concave parts linearized at the center.

    Each side is ``sum_j max_l { f1_jl(y) + f2_jl(x) + <g_jl, y - x> }`` or,
    with an outer map, ``sum_j G(f1_j(y) + f2_j(x) + <g_j, y - x>)``.
    """

    def __init__(self, center, tau, obj: _SideData, con: _SideData, index=0, threads=1):
        self.center = np.asarray(center, dtype=float)
        self.tau = float(tau)
        self.obj, self.con = obj, con
        self.index = index
        self.threads = int(threads)

    def _side(self, side: _SideData, y, d):
        totals, grad_parts = [], []
        for block, c2, g in zip(side.blocks, side.c2, side.grads):
            conv = block.convex(y)
            P, G = c2.shape

            def piece(lo, hi, conv=conv, c2=c2, g=g):
                lin = c2[:, lo:hi].copy()
                for k in range(d.size):
                    if d[k] != 0.0:
                        lin += g[k, :, lo:hi] * d[k]
                if conv is not None:
                    lin += conv[0][:, lo:hi]
                if side.outer is not None:
                    val, der = side.outer(lin[0])
                    gsel = g[:, 0, lo:hi] if conv is None else g[:, 0, lo:hi] + conv[1][:, 0, lo:hi]
                    return val, gsel * der
                best = group_max(lin)
                # first maximizing piece per group
                idx = np.full(hi - lo, P - 1, dtype=np.intp)
                for p in range(P - 2, -1, -1):
                    idx = np.where(lin[p] == best, p, idx)
                flat = idx * G + np.arange(lo, hi)
                gsel = np.stack([np.take(g[k].ravel(), flat) for k in range(d.size)])
                if conv is not None:
                    gsel += np.stack([np.take(conv[1][k].ravel(), flat) for k in range(d.size)])
                return best, gsel

            parts = chunked_map(piece, G, self.threads)
            vals = np.concatenate([p[0] for p in parts])
            gr = np.concatenate([p[1] for p in parts], axis=1)
            if not np.all(np.isfinite(vals)):
                raise OracleError("non-finite model value")
            totals.append(stable_sum(vals))
            grad_parts.append(stable_sum_rows(gr))
        return math.fsum(totals), np.sum(grad_parts, axis=0)

    def branches(self, y):
        y = np.asarray(y, dtype=float)
        d = y - self.center
        fv, fg = self._side(self.obj, y, d)
        cv, cg = self._side(self.con, y, d)
        return fv - self.tau, fg, cv, cg

    def __call__(self, y):
        fv, fg, cv, cg = self.branches(y)
        return (fv, fg) if fv >= cv else (cv, cg)


def _tuple_grads(base, alts, choice):
    if choice is None:
        return base
    bi, alt = choice
    grads = list(base)
    g = grads[bi].copy()
    g[:, alt.piece, alt.group] = alt.grad
    grads[bi] = g
    return grads


def _build_linearized(problem: CompositeProblem, center, tuple_cap, threads, kind):
    if tuple_cap < 1:
        raise ConfigurationError("tuple_cap must be at least 1")
    x = np.asarray(center, dtype=float)
    rho = problem.rho or 0.0
    want_alts = tuple_cap > 1
    fc2, fgr, falts, f_x = _linearize_side(problem.objective, problem.objective_outer, x, want_alts)
    cc2, cgr, calts, c_x = _linearize_side(problem.constraint, problem.constraint_outer, x, want_alts)
    tau = tau_f(f_x, c_x, rho)
    choices = [None] + [("f", a) for a in falts] + [("c", a) for a in calts]
    choices = choices[:tuple_cap]
    models, labels = [], []
    for i, ch in enumerate(choices):
        fg = _tuple_grads(fgr, falts, ch[1] if ch and ch[0] == "f" else None)
        cg = _tuple_grads(cgr, calts, ch[1] if ch and ch[0] == "c" else None)
        obj = _SideData(problem.objective, fc2, fg, problem.objective_outer)
        con = _SideData(problem.constraint, cc2, cg, problem.constraint_outer)
        models.append(LinearizedModel(x, tau, obj, con, index=i, threads=threads))
        if ch is None:
            labels.append(())
        else:
            side, (bi, alt) = ch
            labels.append((side, bi, alt.group, alt.piece))
    H = max(f_x - tau, c_x)
    return ModelFamily(x.copy(), labels, models, problem.X, H, kind)


def build_summax_family(problem: CompositeProblem, center, tuple_cap: int = 1, threads: int = 1) -> ModelFamily:
    """Sum-max model family at ``center``.

    Every weakly-concave piece is replaced by its linearization at the center
    using the first subgradient reported by its oracle.  With ``tuple_cap > 1``
    further models are added, each swapping one piece to an alternative
    subgradient, in component order, until the cap is reached.
    """
    if problem.composite:
        raise ConfigurationError("problem has outer maps; use build_composite_family")
    return _build_linearized(problem, center, tuple_cap, threads, "summax")


def build_composite_family(problem: CompositeProblem, center, tuple_cap: int = 1, threads: int = 1) -> ModelFamily:
    """Composite model family: linearizations inside convex nondecreasing outer maps."""
    for outer in (problem.objective_outer, problem.constraint_outer):
        if outer is not None:
            outer.check_monotone()
    for blocks in (problem.objective, problem.constraint):
        if any(b.n_pieces != 1 for b in blocks):
            raise ConfigurationError("composite family needs one piece per group")
    return _build_linearized(problem, center, tuple_cap, threads, "composite")


# ---------------------------------------------------------------------------
# Special DC setting


def _smooth(oracle, x):
    v, gs = oracle(x)
    return v, gs[0]


@dataclass(frozen=True)
class DCProblem:
    """``f = f1 + min_j fj``, ``c = c1 + min_l cl`` with smooth concave ``fj``, ``cl``.

    The concave pieces are :class:`WeaklyConcaveOracle` objects returning a
    single gradient.
    """

    X: FeasibleSet
    f1: ConvexFnOracle
    f_pieces: tuple
    c1: ConvexFnOracle
    c_pieces: tuple
    rho: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "f_pieces", tuple(self.f_pieces))
        object.__setattr__(self, "c_pieces", tuple(self.c_pieces))
        if not self.f_pieces or not self.c_pieces:
            raise ConfigurationError("need at least one concave piece per side")

    @property
    def dimension(self) -> int:
        return self.X.dimension

    def f2(self, x) -> float:
        return min(p(x)[0] for p in self.f_pieces)

    def c2(self, x) -> float:
        return min(p(x)[0] for p in self.c_pieces)

    def f(self, x) -> float:
        return self.f1(x)[0] + self.f2(x)

    def c(self, x) -> float:
        return self.c1(x)[0] + self.c2(x)

    def with_rho(self, rho: float) -> "DCProblem":
        return DCProblem(self.X, self.f1, self.f_pieces, self.c1, self.c_pieces, float(rho))

    def to_composite(self) -> CompositeProblem:
        """Same problem as a one-group sum-max problem (``min`` of pieces as one concave part)."""

        def min_oracle(pieces):
            def fun(x):
                evals = [_smooth(p, x) for p in pieces]
                v = min(e[0] for e in evals)
                tol = 1e-7 * (1.0 + abs(v))
                return v, [g for val, g in evals if val <= v + tol]

            return WeaklyConcaveOracle(fun, concave=True)

        n = self.dimension
        f_groups = [[(self.f1, min_oracle(self.f_pieces))]]
        c_groups = [[(self.c1, min_oracle(self.c_pieces))]]
        return CompositeProblem((self.X), (PieceTable(f_groups, n),), (PieceTable(c_groups, n),), rho=self.rho)


@dataclass(frozen=True)
class EpsActiveSets:
    eps: float
    f: tuple
    c: tuple


def eps_active_sets(dc: DCProblem, x, eps: float) -> EpsActiveSets:
    """Indices with ``f_j(x) <= f2(x) + eps`` and ``c_l(x) <= c2(x) + eps``."""
    if eps < 0:
        raise ConfigurationError("eps must be nonnegative")
    fv = np.array([p(x)[0] for p in dc.f_pieces])
    cv = np.array([p(x)[0] for p in dc.c_pieces])
    return EpsActiveSets(eps, tuple(int(j) for j in np.flatnonzero(fv <= fv.min() + eps)),
                         tuple(int(j) for j in np.flatnonzero(cv <= cv.min() + eps)))


def default_dc_eps(dc: DCProblem, x) -> float:
    return 1e-3 * (1.0 + abs(dc.f2(x)) + abs(dc.c2(x)))


class DCModel(ConvexModel):
    """``max{ f1(y) + lin f_j(y) - tau, c1(y) + lin c_l(y) }`` for one pair ``(j, l)``."""

    def __init__(self, dc: DCProblem, center, tau, j, l):
        self.dc = dc
        self.center = np.asarray(center, dtype=float)
        self.tau = float(tau)
        self.index = (j, l)
        self.fj_val, self.fj_grad = _smooth(dc.f_pieces[j], self.center)
        self.cl_val, self.cl_grad = _smooth(dc.c_pieces[l], self.center)

    def branches(self, y):
        y = np.asarray(y, dtype=float)
        d = y - self.center
        f1v, f1g = self.dc.f1(y)
        c1v, c1g = self.dc.c1(y)
        fv = f1v + self.fj_val + float(self.fj_grad @ d) - self.tau
        cv = c1v + self.cl_val + float(self.cl_grad @ d)
        return fv, f1g + self.fj_grad, cv, c1g + self.cl_grad

    def __call__(self, y):
        fv, fg, cv, cg = self.branches(y)
        return (fv, fg) if fv >= cv else (cv, cg)


def build_dc_family(dc: DCProblem, center, eps: float | None = None, cap: int = 64) -> ModelFamily:
    """Family indexed by ``A_f^eps(x) x A_c^eps(x)`` (lexicographic order).

    Raises instead of truncating when the product exceeds ``cap``: dropping
    pairs would void the B-stationarity guarantee.
    """
    x = np.asarray(center, dtype=float)
    if eps is None:
        eps = default_dc_eps(dc, x)
    sets = eps_active_sets(dc, x, eps)
    size = len(sets.f) * len(sets.c)
    if size > cap:
        raise ConfigurationError(
            f"{size} eps-active pairs exceed the cap of {cap}; use a smaller eps")
    rho = dc.rho or 0.0
    f_x, c_x = dc.f(x), dc.c(x)
    tau = tau_f(f_x, c_x, rho)
    pairs = [(j, l) for j in sets.f for l in sets.c]
    models = [DCModel(dc, x, tau, j, l) for j, l in pairs]
    return ModelFamily(x.copy(), pairs, models, dc.X, max(f_x - tau, c_x), "dc")


def check_b_stationarity(dc: DCProblem, xbar, tol: float = 1e-6, mu: float = 1.0,
                         max_prox: int = 500, tie_tol: float = 1e-9):
    """Certify B-stationarity of ``xbar`` via the linearized convex subproblems.

    For every active pair ``(j, l)`` the convex program

        min_X f1 + lin f_j   s.t.  c1 + lin c_l <= 0

    is solved through its improvement function at ``xbar`` by proximal point
    iterations (bundle inner solver at tolerance ``tol/10``).  The residual of
    a pair is ``H(xbar) - min H``; ``xbar`` is accepted when all residuals are
    at most ``tol``.  The pointwise Slater condition is assumed, not checked.

    Returns ``(ok, residuals)`` with ``residuals`` keyed by ``(j, l)``.
    """
    x = np.asarray(xbar, dtype=float)
    c_x = dc.c(x)
    f_x = dc.f(x)
    fv = np.array([p(x)[0] for p in dc.f_pieces])
    cv = np.array([p(x)[0] for p in dc.c_pieces])
    act_f = np.flatnonzero(fv <= fv.min() + tie_tol * (1 + abs(fv.min())))
    act_c = np.flatnonzero(cv <= cv.min() + tie_tol * (1 + abs(cv.min())))
    params = InnerParams(lam=0.0, tol=tol / 10.0, max_iter=2000, max_cuts=100)
    residuals = {}
    for j in act_f:
        for l in act_c:
            model = DCModel(dc, x, f_x, int(j), int(l))
            h0, _, g0, _ = model.branches(x)
            if g0 > tol:
                raise ConstraintQualificationError(
                    f"linearized constraint for pair {(int(j), int(l))} is violated at xbar ({g0:.3e})")
            start = max(h0, g0)
            z = x.copy()
            cuts = ()
            for _ in range(max_prox):
                # the pair model is fixed, so its cuts stay valid from one prox center to the next
                res = inner_solve(model, z, mu, params, dc.X, initial_cuts=cuts)
                cuts = res.active_cuts
                step = float(np.linalg.norm(res.y - z))
                z = res.y
                if step <= tol / 10.0:
                    break
            residuals[(int(j), int(l))] = max(0.0, start - model(z)[0])
    ok = all(r <= tol for r in residuals.values())
    return ok, residuals
