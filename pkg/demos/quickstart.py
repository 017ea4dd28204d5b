"""Quickstart: one rigorous upper bound for the hard-squares growth rate.

Run with ``python demos/quickstart.py``.  Takes a few seconds.

The recipe has three steps.  A corner transfer matrix fixed point supplies
small matrices F(a, b); these define a positive trial vector on cylinder
columns of width m; the largest Collatz-Wielandt ratio of that vector,
taken over bracelet classes, bounds the m-th root of the cylinder
eigenvalue, which in turn bounds the growth rate from above.
"""

from ctmbound.bound import ansatz_from_state, upper_bound
from ctmbound.ctmrg import GrowthSchedule, ctm_residuals, ctmrg_solve, kappa_estimate
from ctmbound.exact import Boundary, dominant_eigenvalue
from ctmbound.hplinalg import context, nth_root, to_decimal

MODEL, N, M, BITS = "hard-squares", 8, 10, 256

# 1. Converge the corner transfer matrix equations with 8 x 8 matrices.
state = ctmrg_solve(MODEL, GrowthSchedule(N, tol="1e-30"), bits=BITS)
r_xi, r_eta = ctm_residuals(state)
print(f"CTMRG n={N}: {state.iteration} iterations, residuals {float(r_xi):.1e} / {float(r_eta):.1e}")
print(f"  growth-rate estimate (not a bound): {to_decimal(kappa_estimate(state), 25)}")

# 2. Evaluate the ansatz ratio on every bracelet of width M and keep the worst.
report = upper_bound(MODEL, M, ansatz_from_state(state, BITS))
print(f"upper bound at m={M}: {report.upper_bound}")
print(f"  worst bracelet {report.max_record.bracelet.text}, {report.reported_digits} digits confirmed "
      f"by the double-precision re-check")

# 3. Compare with the exact cylinder eigenvalue, which the bound must dominate.
exact = nth_root(dominant_eigenvalue(MODEL, M, Boundary.CYCLIC, BITS).value, M)
with context(BITS):
    gap = report.upper_bound_value - exact
print(f"exact cylinder root:  {to_decimal(exact, 30)}")
print(f"bound minus exact:    {float(gap):.3e}")
