"""Calibrated measurement noise on sinograms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .norms import sinogram_norm
from .radon import Sinogram


@dataclass(frozen=True)
class NoiseConfig:
    epsilon: float
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")


def add_noise(g: Sinogram, cfg: NoiseConfig) -> Sinogram:
    """Return ``g_eps`` with ``||g_eps - g|| = epsilon`` exactly in the sinogram L2 norm.

    Gaussian noise is drawn on the stored (quotient) samples, so the even
    symmetry of the expanded sinogram is preserved, and then rescaled to the
    target norm.  ``epsilon == 0`` returns ``g`` unchanged.
    """
    if cfg.epsilon == 0:
        return g
    rng = np.random.default_rng(cfg.seed)
    pert = Sinogram(g.geometry, rng.standard_normal(g.values.shape))
    return Sinogram(g.geometry, g.values + pert.values * (cfg.epsilon / sinogram_norm(pert)))
