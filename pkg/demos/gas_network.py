"""Chance-constrained gas exit pressures on the four-node tree.

A smaller sample than the default (N=10000) keeps this under a minute.

    python demos/gas_network.py [N]
"""

import sys

from improx import OuterParams, build_summax_family, solve
from improx.problems import FOUR_NODE_TREE, build_gas_instance, gas_start

N = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
P = build_gas_instance(FOUR_NODE_TREE, N, theta=0.1, alpha=0.05, seed=42)
x0 = gas_start(P)
rep = solve(P, build_summax_family, x0, OuterParams(mu0=2.0))
print(f"N = {N}: status {rep.status}, {rep.iterations} iterations")
print("x    =", rep.x.round(4))
print(f"f(x) = {rep.f:.4f}   c(x) = {rep.c:.2e}   residual {rep.criticality_residual:.1e}")
print(f"time {rep.timing['wall_seconds']:.1f}s")
