"""Problem descriptions, the feasible set and the improvement function.

A problem is ``min f(x) s.t. c(x) <= 0, x in X`` where ``f`` and ``c`` are
sums over groups of a max over pieces, each piece being a convex function
plus a weakly-concave one::

    f(x) = sum_j max_{l in F_j} { f1_jl(x) + f2_jl(x) }

Groups are stored in :class:`PieceBlock` objects so that problems with
hundreds of thousands of scenario groups can be evaluated with numpy in one
sweep.  Small hand-written problems use :class:`PieceTable`, which wraps
per-piece Python oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from ._numerics import stable_sum

__all__ = [
    "ImproxError",
    "ConfigurationError",
    "OracleError",
    "ContractError",
    "FeasibleSet",
    "ConvexFnOracle",
    "WeaklyConcaveOracle",
    "OuterMap",
    "Alternative",
    "PieceBlock",
    "PieceTable",
    "CompositeProblem",
    "eval_improvement",
    "default_rho",
    "descent_test",
]


class ImproxError(Exception):
    """Base class for solver errors."""


class ConfigurationError(ImproxError, ValueError):
    """A parameter is outside its admissible range."""


class OracleError(ImproxError):
    """An oracle returned a non-finite value or broke its output contract."""

    def __init__(self, message: str, component=None):
        super().__init__(message if component is None else f"{message} (component {component})")
        self.component = component


class ContractError(ImproxError):
    """A caller-asserted structural property was found to be violated."""


# ---------------------------------------------------------------------------
# Feasible set


@dataclass(frozen=True)
class FeasibleSet:
    """Box ``lower <= x <= upper`` intersected with ``A x <= b``.

    Missing bounds are encoded as ``-inf`` / ``+inf``.
    """

    lower: np.ndarray
    upper: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ConfigurationError("lower and upper bounds differ in length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ConfigurationError("bounds must not be NaN")
        if np.any(lo > hi):
            raise ConfigurationError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if (self.A is None) != (self.b is None):
            raise ConfigurationError("A and b must be given together")
        if self.A is not None:
            A = np.atleast_2d(np.asarray(self.A, dtype=float))
            b = np.asarray(self.b, dtype=float).ravel()
            if A.shape != (b.size, lo.size):
                raise ConfigurationError(f"A must have shape ({b.size}, {lo.size})")
            if A.shape[0] == 0:
                A, b = None, None
            object.__setattr__(self, "A", A)
            object.__setattr__(self, "b", b)

    @classmethod
    def box(cls, lower, upper) -> "FeasibleSet":
        return cls(lower, upper)

    @classmethod
    def free(cls, n: int) -> "FeasibleSet":
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    @property
    def dimension(self) -> int:
        return self.lower.size

    @property
    def has_linear(self) -> bool:
        return self.A is not None

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != self.lower.shape or not np.all(np.isfinite(x)):
            return False
        if np.any(x < self.lower - tol) or np.any(x > self.upper + tol):
            return False
        if self.A is not None and np.any(self.A @ x - self.b > tol):
            return False
        return True

    def clip(self, x) -> np.ndarray:
        """Project onto the box part (exact projection when there are no linear rows)."""
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def sample(self, rng: np.random.Generator, size: int, spread: float = 10.0) -> np.ndarray:
        """Uniform samples from the box, with infinite sides replaced by ``+-spread``.

        Linear rows are not enforced; intended for tests on box sets.
        """
        fl, fu = np.isfinite(self.lower), np.isfinite(self.upper)
        lo = np.where(fl, self.lower, np.where(fu, self.upper - 2 * spread, -spread))
        hi = np.where(fu, self.upper, np.where(fl, self.lower + 2 * spread, spread))
        return lo + (hi - lo) * rng.random((size, self.dimension))


# ---------------------------------------------------------------------------
# Oracles


@dataclass(frozen=True)
class ConvexFnOracle:
    """Convex function: ``x -> (value, one subgradient)``."""

    fun: Callable[[np.ndarray], tuple[float, np.ndarray]]
    name: str = ""

    def __call__(self, x):
        v, g = self.fun(np.asarray(x, dtype=float))
        return float(v), np.asarray(g, dtype=float)

    @classmethod
    def affine(cls, slope, offset: float = 0.0, name: str = "") -> "ConvexFnOracle":
        slope = np.asarray(slope, dtype=float)
        return cls(lambda x: (offset + slope @ x, slope), name)

    @classmethod
    def zero(cls, n: int) -> "ConvexFnOracle":
        return cls.affine(np.zeros(n), 0.0, "zero")


@dataclass(frozen=True)
class WeaklyConcaveOracle:
    """Weakly-concave function: ``x -> (value, [Clarke subgradients...])``.

    The first subgradient in the list is the default choice; extra entries are
    only used when the model builder is asked to enumerate alternatives.
    ``concave`` marks functions that are genuinely concave (each returned
    vector is then a supergradient).
    """

    fun: Callable[[np.ndarray], tuple[float, Sequence[np.ndarray]]]
    concave: bool = False
    name: str = ""

    def __call__(self, x):
        v, gs = self.fun(np.asarray(x, dtype=float))
        if isinstance(gs, np.ndarray) and gs.ndim == 1:
            gs = [gs]
        gs = [np.asarray(g, dtype=float) for g in gs]
        if not gs:
            raise OracleError(f"weakly-concave oracle {self.name!r} returned no subgradient")
        return float(v), gs

    @classmethod
    def affine(cls, slope, offset: float = 0.0, name: str = "") -> "WeaklyConcaveOracle":
        slope = np.asarray(slope, dtype=float)
        return cls(lambda x: (offset + slope @ x, [slope]), True, name)

    @classmethod
    def zero(cls, n: int) -> "WeaklyConcaveOracle":
        return cls.affine(np.zeros(n), 0.0, "zero")


@dataclass(frozen=True)
class OuterMap:
    """Convex nondecreasing scalar map ``t -> (value, derivative)``.

    ``fun`` must accept numpy arrays elementwise.
    """

    fun: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    name: str = ""

    def __call__(self, t):
        v, d = self.fun(np.asarray(t, dtype=float))
        return np.asarray(v, dtype=float), np.asarray(d, dtype=float)

    @classmethod
    def identity(cls) -> "OuterMap":
        return cls(lambda t: (t, np.ones_like(t)), "identity")

    @classmethod
    def hinge(cls) -> "OuterMap":
        return cls(lambda t: (np.maximum(t, 0.0), (t > 0).astype(float)), "hinge")

    def check_monotone(self, lo: float = -1e3, hi: float = 1e3, samples: int = 2001) -> None:
        t = np.linspace(lo, hi, samples)
        v, d = self(t)
        if np.any(np.diff(v) < -1e-12 * (1 + np.abs(v[:-1]))) or np.any(d < -1e-12):
            raise ContractError(f"outer map {self.name!r} is not nondecreasing")
        mid = 0.5 * (v[:-2] + v[2:])
        if np.any(v[1:-1] > mid + 1e-9 * (1 + np.abs(mid))):
            raise ContractError(f"outer map {self.name!r} is not convex")


# ---------------------------------------------------------------------------
# Piece blocks


class Alternative(NamedTuple):
    """Alternative Clarke subgradient for the concave part of one piece."""

    group: int
    piece: int
    grad: np.ndarray


class PieceBlock:
    """A set of groups, each a max over a fixed number of pieces.

    Subclasses implement :meth:`convex` and :meth:`concave`.  Arrays are laid
    out as ``values[p, g]`` and ``grads[k, p, g]``: the group index runs
    fastest, so a max over pieces is an elementwise maximum of contiguous rows.
    Groups with fewer pieces pad with ``-inf`` values.
    """

    n_groups: int
    n_pieces: int
    dim: int

    def convex(self, x: np.ndarray):
        """Convex parts at ``x``: ``(values, grads)`` or ``None`` when identically zero."""
        raise NotImplementedError

    def concave(self, x: np.ndarray, alternatives: bool = False):
        """Weakly-concave parts: ``(values, grads, [Alternative, ...])``."""
        raise NotImplementedError

    def values(self, x: np.ndarray) -> np.ndarray:
        """Piece values ``f1 + f2`` at ``x``, shape ``(P, G)``."""
        vals, _, _ = self.concave(x)
        conv = self.convex(x)
        return vals if conv is None else vals + conv[0]


class PieceTable(PieceBlock):
    """Block assembled from per-piece Python oracles.

    ``groups[j]`` is a list of ``(ConvexFnOracle | None, WeaklyConcaveOracle | None)``
    pairs; ``None`` stands for the zero function.
    """

    def __init__(self, groups, dim: int):
        if not groups or any(len(g) == 0 for g in groups):
            raise ConfigurationError("every group needs at least one piece")
        self.groups = [list(g) for g in groups]
        self.dim = int(dim)
        self.n_groups = len(self.groups)
        self.n_pieces = max(len(g) for g in self.groups)

    def _check(self, v, g, where):
        if not np.isfinite(v) or g.shape != (self.dim,) or not np.all(np.isfinite(g)):
            raise OracleError("non-finite or malformed oracle output", where)

    def convex(self, x):
        G, P, n = self.n_groups, self.n_pieces, self.dim
        if all(c is None for grp in self.groups for c, _ in grp):
            return None
        vals = np.full((P, G), -np.inf)
        grads = np.zeros((n, P, G))
        for j, grp in enumerate(self.groups):
            for p, (conv, _) in enumerate(grp):
                if conv is None:
                    vals[p, j] = 0.0
                    continue
                v, g = conv(x)
                self._check(v, g, (j, p))
                vals[p, j], grads[:, p, j] = v, g
        return vals, grads

    def concave(self, x, alternatives=False):
        G, P, n = self.n_groups, self.n_pieces, self.dim
        vals = np.full((P, G), -np.inf)
        grads = np.zeros((n, P, G))
        alts = []
        for j, grp in enumerate(self.groups):
            for p, (_, conc) in enumerate(grp):
                if conc is None:
                    vals[p, j] = 0.0
                    continue
                v, gs = conc(x)
                for g in gs:
                    self._check(v, g, (j, p))
                vals[p, j], grads[:, p, j] = v, gs[0]
                if alternatives:
                    alts.extend(Alternative(j, p, g) for g in gs[1:])
        return vals, grads, alts


# ---------------------------------------------------------------------------
# Problems


def group_max(vals: np.ndarray) -> np.ndarray:
    """Per-group maximum of a ``(P, G)`` array (elementwise over piece rows)."""
    out = vals[0].copy()
    for row in vals[1:]:
        np.maximum(out, row, out=out)
    return out


def side_total(vals: np.ndarray, outer=None, where=0) -> float:
    """``sum_g max_p vals[p, g]`` (or ``sum_g outer(vals[0, g])``) with deterministic summation."""
    inner = group_max(vals)
    if not np.all(np.isfinite(inner)):
        bad = int(np.flatnonzero(~np.isfinite(inner))[0])
        raise OracleError("non-finite piece value", (where, bad))
    if outer is not None:
        inner, _ = outer(inner)
    return stable_sum(inner)


def _side_value(blocks, outer, x) -> float:
    return math.fsum(side_total(block.values(x), outer, bi) for bi, block in enumerate(blocks))


@dataclass(frozen=True)
class CompositeProblem:
    """``min f(x) s.t. c(x) <= 0, x in X`` in sum-max (or composite) form.

    With ``objective_outer``/``constraint_outer`` set, every block on that side
    must have one piece per group and the side is evaluated as
    ``sum_j G(f1_j + f2_j)``.
    """

    X: FeasibleSet
    objective: tuple
    constraint: tuple
    objective_outer: OuterMap | None = None
    constraint_outer: OuterMap | None = None
    rho: float | None = None
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        obj = tuple(self.objective) if not isinstance(self.objective, PieceBlock) else (self.objective,)
        con = tuple(self.constraint) if not isinstance(self.constraint, PieceBlock) else (self.constraint,)
        object.__setattr__(self, "objective", obj)
        object.__setattr__(self, "constraint", con)
        if not obj or not con:
            raise ConfigurationError("need at least one objective and one constraint group")
        for b in obj + con:
            if b.n_groups < 1 or b.n_pieces < 1:
                raise ConfigurationError("empty group or piece set")
            if b.dim != self.X.dimension:
                raise ConfigurationError("block dimension does not match X")
        for blocks, outer in ((obj, self.objective_outer), (con, self.constraint_outer)):
            if outer is not None and any(b.n_pieces != 1 for b in blocks):
                raise ConfigurationError("outer maps require a single piece per group")
        if self.rho is not None and not (self.rho >= 0 and math.isfinite(self.rho)):
            raise ConfigurationError("rho must be finite and nonnegative")

    @classmethod
    def from_pieces(cls, X, f_groups, c_groups, **kw) -> "CompositeProblem":
        n = X.dimension
        return cls(X, (PieceTable(f_groups, n),), (PieceTable(c_groups, n),), **kw)

    @property
    def dimension(self) -> int:
        return self.X.dimension

    @property
    def composite(self) -> bool:
        return self.objective_outer is not None or self.constraint_outer is not None

    def f(self, x) -> float:
        return _side_value(self.objective, self.objective_outer, np.asarray(x, dtype=float))

    def c(self, x) -> float:
        return _side_value(self.constraint, self.constraint_outer, np.asarray(x, dtype=float))

    def with_rho(self, rho: float) -> "CompositeProblem":
        return replace(self, rho=float(rho))


# ---------------------------------------------------------------------------
# Improvement function


def default_rho(f0: float, c0: float) -> float:
    """Scale factor ``|f0| / (1 + |c0|)`` balancing objective and constraint."""
    return abs(f0) / (1.0 + abs(c0))


def tau_f(f_x: float, c_x: float, rho: float) -> float:
    return f_x + rho * max(0.0, c_x)


def _finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise OracleError(f"non-finite {what}")
    return value


def eval_improvement(problem, center, y) -> float:
    """Improvement function ``max{f(y) - tau_f(center), c(y)}``.

    ``problem`` is anything exposing ``f``, ``c`` and ``rho``; ``rho=None`` is
    read as 0.
    """
    rho = problem.rho or 0.0
    fx = _finite(problem.f(center), "f(center)")
    cx = _finite(problem.c(center), "c(center)")
    fy = _finite(problem.f(y), "f(y)")
    cy = _finite(problem.c(y), "c(y)")
    return max(fy - tau_f(fx, cx, rho), cy)


def check_step_params(kappa: float, lam: float) -> None:
    if not 0.0 < kappa < 1.0:
        raise ConfigurationError(f"kappa must lie in (0, 1), got {kappa}")
    if not 0.0 <= lam < kappa:
        raise ConfigurationError(f"lambda must lie in [0, kappa), got {lam}")


def descent_test(H_y: float, H_x: float, kappa: float, lam: float, dist_sq: float) -> bool:
    """Serious-step test ``H_y <= H_x - (kappa - lam)/2 * dist_sq``."""
    check_step_params(kappa, lam)
    if dist_sq < 0:
        raise ConfigurationError("dist_sq must be nonnegative")
    return H_y <= H_x - 0.5 * (kappa - lam) * dist_sq
