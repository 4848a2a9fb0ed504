"""
Ill-posedness and regularisation
================================

Assemble the dense projection matrix of a 16x16 grid, look at its singular
values, and compare a sound Tikhonov parameter choice with one that shrinks
too fast as the noise level drops.
"""

import numpy as np

from radonms.grid import centered_grid, gaussian
from radonms.inversion import analyze_spectrum, convergence_sweep
from radonms.radon import build_dense_operator, geometry_for_grid

grid = centered_grid(16, 1.0)
op = build_dense_operator(geometry_for_grid(grid, 24), grid)
spectrum = analyze_spectrum(op, np.logspace(-6, 0, 13))
sigma = spectrum.singular_values / spectrum.singular_values[0]
print(f"sigma_1 = {spectrum.singular_values[0]:.4f}")
print(f"sigma_k / sigma_1 drops below 0.1 at k = {spectrum.decay_index(0.1) + 1} of {sigma.size}")

# %%
# With fewer angles the small singular values are small enough that
# gamma = eps**3 amplifies the noise instead of averaging it out.
op16 = build_dense_operator(geometry_for_grid(grid, 16), grid)
f = gaussian(grid, width=0.4)
eps = [0.2, 0.1, 0.05, 0.025]
for label, rule in (("gamma = eps", lambda e: e), ("gamma = eps^3", lambda e: e**3)):
    sweep = convergence_sweep(op16, f, eps, rule, seed=0)
    print(f"{label:14s} errors {np.round(sweep.errors(), 3)} converging={sweep.converging()}")
