"""Small problems with closed-form answers, used for self-checks."""

from __future__ import annotations

import numpy as np

from ..core import ConvexFnOracle, FeasibleSet, WeaklyConcaveOracle
from ..models import DCProblem

__all__ = ["dc_toy_instance"]


def dc_toy_instance() -> DCProblem:
    """``f(x) = x^2 - |x|`` on ``[-1, 1]`` with the inactive constraint ``c = -1``.

    ``-|x|`` is written as ``min{x, -x}``.  The B-stationary points are
    ``x = +-1/2``; ``x = 0`` is critical for the min-of-models but not
    B-stationary.
    """
    X = FeasibleSet.box([-1.0], [1.0])
    f1 = ConvexFnOracle(lambda x: (x[0] ** 2, 2.0 * x), "square")
    pieces = (WeaklyConcaveOracle.affine([1.0], 0.0, "x"), WeaklyConcaveOracle.affine([-1.0], 0.0, "-x"))
    c1 = ConvexFnOracle.affine(np.zeros(1), -1.0, "const")
    return DCProblem(X, f1, pieces, c1, (WeaklyConcaveOracle.zero(1),))
