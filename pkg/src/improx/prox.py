"""Outer proximal loop on the improvement function.

At each center ``x`` the model family is rebuilt, every convex model is
minimized inexactly with a prox term by the bundle inner solver, and the best
candidate ``y`` is tested for sufficient decrease of ``H(.; x)``.  Success
moves the center (serious step); failure only raises the prox parameter
(null step).  The loop stops when the candidate is within ``tol`` of the
center.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .bundle import CENTER_OPTIMAL, InnerParams, InnerResult, InnerSolverError, inner_solve, select_candidate
from .core import (
    ConfigurationError,
    ImproxError,
    check_step_params,
    default_rho,
    descent_test,
)

__all__ = [
    "OuterParams",
    "SolveReport",
    "PreconditionError",
    "solve",
    "criticality_residual",
    "CONVERGED",
    "MAX_ITER",
]

CONVERGED = "converged"
MAX_ITER = "max_iter"


class PreconditionError(ImproxError, ValueError):
    """The starting point or another input violates a documented precondition."""


@dataclass(frozen=True)
class OuterParams:
    """Outer-loop parameters.

    ``mu0`` defaults to ``kappa`` and ``delta`` (the minimum increase of ``mu``
    at a null step) defaults to ``kappa``; null steps set
    ``mu <- max(gamma * mu, mu + delta)``.  ``inner_tol`` is the stopping
    tolerance of the bundle subproblem solver and defaults to ``tol``.
    """

    kappa: float = 0.3
    lam: float = 0.1
    mu0: float | None = None
    tol: float = 1e-6
    gamma: float = 2.0
    delta: float | None = None
    max_iter: int = 10000
    inner_tol: float | None = None
    inner_max_iter: int = 500
    max_cuts: int = 100

    def __post_init__(self):
        check_step_params(self.kappa, self.lam)
        if self.mu0 is None:
            object.__setattr__(self, "mu0", float(self.kappa))
        if self.delta is None:
            object.__setattr__(self, "delta", float(self.kappa))
        if not self.mu0 >= self.kappa:
            raise ConfigurationError(f"mu0 must be at least kappa, got {self.mu0}")
        if not self.tol >= 0:
            raise ConfigurationError("tol must be nonnegative")
        if not self.gamma > 1:
            raise ConfigurationError("gamma must exceed 1")
        if not self.delta > 0:
            raise ConfigurationError("delta must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be positive")
        if self.inner_tol is not None and not self.inner_tol >= 0:
            raise ConfigurationError("inner_tol must be nonnegative")

    @property
    def inner(self) -> InnerParams:
        tol = self.tol if self.inner_tol is None else self.inner_tol
        return InnerParams(lam=self.lam, tol=tol, max_iter=self.inner_max_iter,
                           max_cuts=self.max_cuts, kappa=self.kappa)

    def next_mu(self, mu: float) -> float:
        return max(self.gamma * mu, mu + self.delta)


def _plain(v):
    if isinstance(v, np.ndarray):
        return [float(t) for t in v.ravel()]
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, dict):
        return {str(k): _plain(w) for k, w in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(w) for w in v]
    return v


@dataclass
class SolveReport:
    x: np.ndarray
    f: float
    c: float
    status: str
    iterations: int
    serious_steps: int
    mu_final: float
    rho: float
    trace: list
    final_step: float
    criticality_residual: float | None = None
    params: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @property
    def null_steps(self) -> int:
        return self.iterations - self.serious_steps

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "x": _plain(self.x),
            "f": self.f,
            "c": self.c,
            "status": self.status,
            "iterations": self.iterations,
            "serious_steps": self.serious_steps,
            "null_steps": self.null_steps,
            "mu_final": self.mu_final,
            "rho": self.rho,
            "final_step": self.final_step,
            "criticality_residual": self.criticality_residual,
            "params": _plain(self.params),
            "meta": _plain(self.meta),
            "trace": _plain(self.trace),
        }
        if timing:
            d["timing"] = _plain(self.timing)
        return d

    def to_json(self, timing: bool = True, indent: int | None = 1) -> str:
        return json.dumps(self.to_dict(timing), indent=indent, sort_keys=True, allow_nan=True)


def _call_builder(model_builder, problem, center):
    return model_builder(problem, center) if problem is not None else model_builder(center)


def solve(problem, model_builder: Callable, x0, params: OuterParams | None = None,
          callback: Callable | None = None, certify: bool = True) -> SolveReport:
    """Run the outer proximal method from ``x0``.

    Parameters
    ----------
    problem
        Anything exposing ``X``, ``f``, ``c``, ``rho`` and ``with_rho``
        (:class:`~improx.core.CompositeProblem` or
        :class:`~improx.models.DCProblem`).  ``rho=None`` picks
        ``|f(x0)| / (1 + |c(x0)|)``.
    model_builder : callable
        ``model_builder(problem, center) -> ModelFamily``.
    x0 : array_like
        Starting point in ``X``.
    params : OuterParams
    callback : callable, optional
        Called with each trace entry.
    certify : bool
        Compute the criticality residual at the final point (``mu_probe``
        equal to the final ``mu``).
    """
    params = params or OuterParams()
    x = np.array(x0, dtype=float)
    if not problem.X.contains(x):
        raise PreconditionError("x0 is not in X")
    wall0, cpu0 = time.perf_counter(), time.process_time()
    f_x, c_x = problem.f(x), problem.c(x)
    if not (math.isfinite(f_x) and math.isfinite(c_x)):
        raise PreconditionError("f or c is not finite at x0")
    if problem.rho is None:
        problem = problem.with_rho(default_rho(f_x, c_x))
    rho = float(problem.rho)
    inner = params.inner
    mu = float(params.mu0)
    trace = []
    serious = 0
    status = MAX_ITER
    step = math.inf
    model_time = 0.0
    for k in range(params.max_iter + 1):
        t0 = time.perf_counter()
        family = model_builder(problem, x)
        results = {}
        for i, model in enumerate(family.models):
            try:
                res = inner_solve(model, x, mu, inner, problem.X)
            except ImproxError as err:
                raise InnerSolverError(f"inner solve failed at outer iteration {k}: {err}",
                                       {"trace": trace, "x": x.copy()}) from err
            if not res.usable:
                if res.gap > 10.0 * inner.tol:
                    raise InnerSolverError(
                        f"inner solver hit its iteration cap at outer iteration {k} (model {i}, "
                        f"gap {res.gap:.3e})", {"trace": trace, "x": x.copy(), "inner": res})
                # close enough: treat the center as the subproblem solution
                res = InnerResult(x.copy(), max(0.0, res.gap), CENTER_OPTIMAL, res.iterations,
                                  res.cuts, res.gap, res.model_value, res.qp_point)
            results[i] = res
        model_time += time.perf_counter() - t0
        a, y, _ = select_candidate(results, family, x, mu)
        eps = results[a].eps
        d = y - x
        dist_sq = float(d @ d)
        step = math.sqrt(dist_sq)
        if step <= params.tol:
            status = CONVERGED
            break
        if k == params.max_iter:
            break
        H_x = max(0.0, c_x)
        f_y, c_y = problem.f(y), problem.c(y)
        H_y = max(f_y - (f_x + rho * max(0.0, c_x)), c_y)
        if not math.isfinite(H_y):
            raise InnerSolverError(f"non-finite improvement value at outer iteration {k}",
                                   {"trace": trace, "x": x.copy()})
        accepted = descent_test(H_y, H_x, params.kappa, params.lam, dist_sq)
        entry = {
            "k": k,
            "x": x.copy(),
            "mu": mu,
            "step": step,
            "H_decrease": H_x - H_y,
            "family_size": len(family),
            "model": a,
            "eps": eps,
            "stalled": bool(results[a].stalled),
            "inner_iterations": int(sum(r.iterations for r in results.values())),
            "serious": bool(accepted),
            "f": f_x,
            "c": c_x,
        }
        trace.append(entry)
        if callback is not None:
            callback(entry)
        if accepted:
            x, f_x, c_x = y, f_y, c_y
            serious += 1
        else:
            mu = params.next_mu(mu)

    residual = None
    if certify:
        residual = criticality_residual(model_builder, x, mu, problem=problem)
    wall = time.perf_counter() - wall0
    cpu = time.process_time() - cpu0
    return SolveReport(
        x=x, f=f_x, c=c_x, status=status, iterations=len(trace), serious_steps=serious,
        mu_final=mu, rho=rho, trace=trace, final_step=step, criticality_residual=residual,
        params=asdict(params), meta=dict(getattr(problem, "meta", {}) or {}),
        timing={"wall_seconds": wall, "cpu_seconds": cpu, "model_seconds": model_time},
    )


def criticality_residual(model_builder: Callable, xbar, mu_probe: float, problem=None,
                         rel_tol: float = 1e-9, qp_tol: float = 1e-13, max_iter: int = 2000) -> float:
    """Largest prox displacement ``||prox_a(xbar) - xbar||`` over the active models.

    Active models are those with ``M_a(xbar; xbar) = H(xbar; xbar)`` up to
    ``rel_tol * (1 + |H|)``.  Each prox subproblem is solved by the bundle
    method with no inexactness allowance, a zero gap tolerance and QPs solved
    to ``qp_tol * (1 + ||xbar||)``; the final QP point is taken as the prox
    solution.

    ``model_builder`` is called as ``model_builder(problem, xbar)`` when
    ``problem`` is given and as ``model_builder(xbar)`` otherwise.
    """
    if not mu_probe > 0:
        raise ConfigurationError("mu_probe must be positive")
    xbar = np.asarray(xbar, dtype=float)
    family = _call_builder(model_builder, problem, xbar)
    scale = 1.0 + float(np.linalg.norm(xbar))
    worst = 0.0
    for i in family.active_indices(rel_tol):
        model = family.models[i]
        params = InnerParams(lam=0.0, tol=0.0, max_iter=max_iter, qp_tol=qp_tol * scale)
        res = inner_solve(model, xbar, mu_probe, params, family.X)
        if not res.usable:
            raise InnerSolverError("criticality probe did not converge", res)
        worst = max(worst, float(np.linalg.norm(res.qp_point - xbar)))
    return worst
