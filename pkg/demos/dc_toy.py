"""DC toy problem: f(x) = x^2 - |x| on [-1, 1].

Solves from a handful of starts and certifies the limits.  The points
+-1/2 are B-stationary; 0 is critical for the min-of-models but fails
the certificate.

    python demos/dc_toy.py
"""

from improx import OuterParams, build_dc_family, check_b_stationarity, criticality_residual, solve
from improx.problems import dc_toy_instance

P = dc_toy_instance()
params = OuterParams(inner_tol=1e-12)
builder = lambda p, c: build_dc_family(p, c)

for x0 in (-0.9, -0.2, 0.3, 0.9):
    rep = solve(P, builder, [x0], params)
    print(f"start {x0:+.1f} -> x = {rep.x[0]:+.7f}  f = {rep.f:.6f}  "
          f"{rep.iterations} iterations ({rep.serious_steps} serious)")

for x in (0.5, 0.0):
    ok, residuals = check_b_stationarity(P, [x])
    worst = max(residuals.values())
    print(f"x = {x}: B-stationary {ok}, largest subproblem residual {worst:.4f}")

# prox displacement of the active models at 0: nonzero, so 0 is not critical for them
Q = P.with_rho(0.0)
print("criticality residual at 0 (mu = 1):", criticality_residual(lambda c: build_dc_family(Q, c, 0.0), [0.0], 1.0))
