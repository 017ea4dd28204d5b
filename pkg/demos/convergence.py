"""How the upper bound improves with cylinder width m and ansatz size n.

Run with ``python demos/convergence.py``; about a minute on one core.

For a fixed ansatz, widening the cylinder tightens the bound quickly at
first.  For a fixed width, growing the corner matrices helps until the
bound sits within about 1e-6 of the exact cylinder value.  Beyond that
the bound is not monotone in n: each n has its own finite fixed point,
and the bound wobbles at the 1e-7 level while staying above the exact
cylinder root, which it can never cross.
"""

from ctmbound.cli import study_rows

MODEL = "hard-squares"

print("bound against m (n = 8):")
for row in study_rows(MODEL, [4, 6, 8, 10, 12], [8], 256, 256, "1e-30", 2000, 50):
    print(f"  m={row['m']:>2}  bound {row['bound'][:22]}  log10(bound - exact) {row['log10_gap']}")

print("bound against n (m = 10):")
for row in study_rows(MODEL, [10], [2, 3, 4, 6, 8, 12], 256, 256, "1e-30", 2000, 50):
    print(f"  n={row['n']:>2}  bound {row['bound'][:22]}  log10(bound - exact) {row['log10_gap']}")
