"""Setting up a small problem by hand.

    min  max{|x1| + x2, -(x1 - 1)^2}  s.t.  x1^2 + x2^2 - 1 <= 0,  x in [-2, 2]^2

The objective has one max-group with a convex piece and a weakly-concave
piece; the constraint is smooth and convex.

    python demos/custom_problem.py
"""

import numpy as np

from improx import (CompositeProblem, ConvexFnOracle, FeasibleSet, WeaklyConcaveOracle,
                    build_summax_family, solve)

X = FeasibleSet.box([-2.0, -2.0], [2.0, 2.0])
abs_plus = ConvexFnOracle(lambda x: (abs(x[0]) + x[1], np.array([np.sign(x[0]), 1.0])), "abs+x2")
# weakly-concave oracles return the value and a list of gradients
bowl = WeaklyConcaveOracle(lambda x: (-(x[0] - 1.0) ** 2, [np.array([-2.0 * (x[0] - 1.0), 0.0])]), "-bowl")
disk = ConvexFnOracle(lambda x: (float(x @ x) - 1.0, 2.0 * x), "disk")

P = CompositeProblem.from_pieces(X, [[(abs_plus, None), (None, bowl)]], [[(disk, None)]])
rep = solve(P, build_summax_family, [0.5, 0.5])
print(f"status {rep.status}: x = {rep.x.round(6)}, f = {rep.f:.6f}, c = {rep.c:.2e}")
