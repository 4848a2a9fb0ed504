"""Discrete L2 measures shared by every module.

Image side: each cell carries its volume.  Sinogram side: each stored sample
``(X_i, xi_j)`` carries ``dX * |S^{N-1}| * w_j`` where ``w_j`` are the probability
weights of the stored (half-sphere) directions.  Since every stored direction
stands for the pair ``xi, -xi``, the sinogram measure approximates
``dX dxi`` over the whole double cover ``R x S^{N-1}``, which is the measure
the norm identities are stated in.
"""

from math import gamma, pi

import numpy as np


def sphere_area(ndim: int) -> float:
    """Surface area of the unit sphere ``S^{ndim-1}`` (2*pi in 2D, 4*pi in 3D)."""
    return 2.0 * pi ** (ndim / 2) / gamma(ndim / 2)


def image_inner(a, b) -> float:
    return float(np.sum(a.values * b.values) * a.grid.cell_volume)


def image_norm(a) -> float:
    return float(np.sqrt(max(image_inner(a, a), 0.0)))


def sinogram_inner(a, b) -> float:
    w = a.geometry.sample_weights()
    return float(np.sum(a.values * b.values * w))


def sinogram_norm(a) -> float:
    return float(np.sqrt(max(sinogram_inner(a, a), 0.0)))
