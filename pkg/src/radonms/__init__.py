"""Radon transform tomography on regular grids.

Modules
-------
grid
    Grids, images, ellipse/ellipsoid phantoms and error metrics.
radon
    Forward projection, back-projection, dense operators and range moments.
noise
    Calibrated sinogram noise.
inversion
    Fractional Laplacian, filtered back-projection and regularisation families.
electrostatics
    Potentials, fields and the norm identities linking them to projections (3D).
mspc
    Piecewise-constant Mumford-Shah reconstruction.
io, cli
    File formats and the ``radonms`` command.
"""

from .grid import (
    Ellipsoid,
    ImageGrid,
    ImageND,
    PhantomSpec,
    centered_grid,
    disk,
    gaussian,
    make_grid,
    rasterize_phantom,
    relative_l2_error,
    shepp_logan,
    two_disks,
)
from .inversion import (
    FilterFamily,
    SpectralFilterConfig,
    analyze_spectrum,
    apply_regularizer,
    convergence_sweep,
    fbp_reconstruct,
    fractional_laplacian,
)
from .noise import NoiseConfig, add_noise
from .norms import image_norm, sinogram_norm
from .radon import (
    ProjectionGeometry,
    Sinogram,
    TruncationError,
    back_project,
    build_dense_operator,
    check_range_moments,
    forward_project,
    geometry_for_grid,
    parallel_beam,
)

__version__ = "0.1.0"
