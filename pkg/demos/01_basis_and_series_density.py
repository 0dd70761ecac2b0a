"""Basis functions, quadrature, and the exponential-series density family.

Walks through the building blocks: evaluate the orthonormal shifted
Legendre basis, verify orthonormality numerically, and fit a series
density to a chosen moment vector by Newton's method.

Run:  python demos/01_basis_and_series_density.py
"""

import numpy as np

from forestdens import (default_basis, density, legendre_eval, moments,
                        solve_theta)
from forestdens.basis import make_quadrature

# --- the basis -----------------------------------------------------------
# Degree 0 is the constant 1; degrees 1..J are the non-constant functions
# the estimator actually uses.
for ell in range(4):
    print(f"phi_{ell}(0.0) = {legendre_eval(ell, 0.0):+.6f}   "
          f"phi_{ell}(1.0) = {legendre_eval(ell, 1.0):+.6f}")

# Gauss-Legendre quadrature on [0, 1] drives every integral.
nodes, weights = make_quadrature(32)
gram = np.array([[weights @ (legendre_eval(j, nodes) * legendre_eval(k, nodes))
                  for k in range(6)] for j in range(6)])
print("\nmax orthonormality error, degrees 0..5:",
      f"{np.max(np.abs(gram - np.eye(6))):.2e}")

# --- the density family --------------------------------------------------
# dens(y; theta) = exp(theta . phi(y)) / Z(theta).  Solving for theta from a
# moment target inverts the smooth map theta -> E[phi(Y)].
spec = default_basis(4)
target = np.array([0.3, -0.25, 0.05, 0.0])
sol = solve_theta(target, spec)
print(f"\nsolved coefficients in {sol.iterations} Newton steps: "
      f"{np.round(sol.theta, 4)}")
print("matched moments:", np.round(moments(sol.theta, spec).mu, 6))

grid = np.linspace(0.0, 1.0, 9)
print("\ny      dens(y; theta)")
for y, f in zip(grid, density(grid, sol.theta, spec)):
    print(f"{y:.3f}  {f:.4f}")

total = weights @ density(nodes, sol.theta, spec)
print(f"\nintegral over [0, 1]: {total:.12f}")
