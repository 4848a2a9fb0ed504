"""
Sinograms as electric fields
============================

In three dimensions the back-projected sinogram is a Coulomb potential.
This script checks the far-field decay of that potential and the identity
between the sinogram norm and the field energy.
"""

import numpy as np

from radonms.electrostatics import potential_from_density, verify_norm_identity
from radonms.grid import centered_grid, gaussian
from radonms.radon import geometry_for_grid

# %%
# A narrow Gaussian behaves like a point charge: phi ~ 1/|x|.
grid = centered_grid(64, 4.0, 3)
phi = potential_from_density(gaussian(grid, width=0.15)).values
x = grid.axis_coords(0)
mid = grid.dims[1] // 2
sel = (x > 0.8) & (x < 3.5)
slope = np.polyfit(np.log(x[sel]), np.log(phi[sel, mid, mid]), 1)[0]
print(f"log-log slope of the potential {slope:.3f}")

# %%
# The energy identity tightens as grid and direction set are refined.
for n, ndir in ((16, 64), (24, 128), (32, 256)):
    g = centered_grid(n, 2.0, 3)
    rep = verify_norm_identity(gaussian(g, width=0.5), geometry_for_grid(g, ndir))
    print(f"{n}^3, {ndir} directions: relative residual {rep.residual:.3f}")
