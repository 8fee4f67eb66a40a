"""Beam-bar design under a buffered failure-probability constraint.

Compares the solver with the grid-search baseline on the same sample.
The default N is reduced from 100000 to keep the run short.

    python demos/beam_design.py [N]
"""

import sys
import time

from improx import OuterParams, build_summax_family, solve
from improx.problems import BeamSpec, buffered_start, build_cantilever_instance, grid_search

N = int(sys.argv[1]) if len(sys.argv) > 1 else 20000
spec = BeamSpec(N=N)
P = build_cantilever_instance(spec, seed=42)

t0 = time.perf_counter()
grid = grid_search(P, (1000, 100))
t_grid = time.perf_counter() - t0
print(f"grid:   point {grid.point.round(2)}  cost {grid.cost:.1f}  ({t_grid:.1f}s)")

x0 = buffered_start(P, spec.lower)
rep = solve(P, build_summax_family, x0, OuterParams(kappa=0.3, lam=0.1, tol=1e-6))
print(f"solver: point {rep.x[:2].round(3)}  cost {rep.f:.1f}  AVaR {rep.c:.2e}  "
      f"{rep.iterations} iterations ({rep.timing['wall_seconds']:.1f}s)")
