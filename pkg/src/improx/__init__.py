"""Proximal method on the improvement function for nonsmooth nonconvex constrained problems.

``min f(x)  s.t.  c(x) <= 0,  x in X`` is solved by repeatedly minimizing convex
models of the improvement function ``H(y; x) = max{f(y) - tau(x), c(y)}`` with a
prox term, each subproblem handled by a bundle method whose QPs are solved by
an exact active-set routine.
"""

from .bundle import InnerParams, InnerResult, inner_solve, select_candidate, update_cuts
from .core import (
    CompositeProblem,
    ConfigurationError,
    ContractError,
    ConvexFnOracle,
    FeasibleSet,
    ImproxError,
    OracleError,
    OuterMap,
    PieceBlock,
    PieceTable,
    WeaklyConcaveOracle,
    default_rho,
    descent_test,
    eval_improvement,
)
from .models import (
    DCProblem,
    ModelFamily,
    build_composite_family,
    build_dc_family,
    build_summax_family,
    check_b_stationarity,
    eps_active_sets,
)
from .prox import OuterParams, SolveReport, criticality_residual, solve
from .qp import Cut, QpSolution, solve_prox_cut_qp

__version__ = "0.1.0"
