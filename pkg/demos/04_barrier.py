"""The radial barrier phi = M1 - M2 |x|^-alpha and where a grid check hits its limit.

For each dimension and ellipticity ratio the barrier is checked on a grid
with h = 0.02. The borderline case d = 3, lambda = Lambda = 1 has alpha = 1,
so phi is a multiple of the Newtonian potential and its Pucci operator is
the Laplacian, exactly zero away from the origin. The 7-point Laplacian of
1/r is not zero: it carries an O(h^2) truncation error of fixed sign, which
is what the grid check sees.
"""

import numpy as np

from degenlab import EllipticityPair, WeightSpec, build_barrier, verify_barrier
from degenlab.runner import _barrier_grid

print(f"{'d':>2} {'Lambda':>6} {'alpha':>6} {'M1':>9} {'M2':>10} {'max omega M+':>13}  status")
for d in (1, 2, 3):
    for Lam in (1, 2, 5):
        b = build_barrier(d, EllipticityPair(1, Lam))
        rep = verify_barrier(b, WeightSpec(0.5), _barrier_grid(d, 0.02))
        print(f"{d:2d} {Lam:6d} {b.alpha:6.1f} {b.M1:9.4f} {b.M2:10.4f} {rep.max_outer:13.3e}  "
              f"{'pass' if rep.passed else 'FAIL'}")

b = build_barrier(3, EllipticityPair(1, 1))
x = np.array([0.16, 0.16, 0.16])
print("\nd = 3, lambda = Lambda = 1: discrete Laplacian of phi at x = (0.16, 0.16, 0.16)")
for h in (0.04, 0.02, 0.01, 0.005):
    lap = sum(float(b(x + h * e) - 2 * b(x) + b(x - h * e)) for e in np.eye(3)) / h ** 2
    print(f"  h = {h:6.3f}   {lap:.4e}")
print("Each halving of h divides it by 4, so 1e-6 near |x| = 1/4 would need h near 1e-5.")
