"""Sandwich the growth rate of all three models between two rigorous bounds.

Run with ``python demos/sandwich.py`` (well under a minute).

Lower bounds come from free strips: the ratio of strip eigenvalues of
widths p + 2q + 1 and 2q + 1, raised to 1/p.  Upper bounds come from the
corner transfer matrix ansatz on cylinders of width 12.  The printed
interval always contains the true growth rate.
"""

from ctmbound.bound import ansatz_from_state, upper_bound
from ctmbound.ctmrg import GrowthSchedule, ctmrg_solve
from ctmbound.exact import cw_lower
from ctmbound.hplinalg import context, to_decimal

BITS, N, M = 256, 8, 12
LOWER_PQ = {"hard-squares": (4, 4), "nak": (2, 2), "rwim": (2, 2)}

for model, (p, q) in LOWER_PQ.items():
    lower = cw_lower(model, p, q, BITS)
    state = ctmrg_solve(model, GrowthSchedule(N, tol="1e-30"), bits=BITS)
    upper = upper_bound(model, M, ansatz_from_state(state, BITS)).upper_bound_value
    with context(BITS):
        width = upper - lower
    print(f"{model:>13}:  {to_decimal(lower, 16, 'D')}  <=  kappa  <=  {to_decimal(upper, 16, 'U')}"
          f"   (width {float(width):.1e})")
