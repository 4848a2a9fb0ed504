"""Forward Radon transform and its dual on the ``(X, xi)`` parametrisation.

The projector is pixel driven: every cell is split into ``supersample**N``
sub-points carrying equal shares of the cell mass, and each sub-point deposits
its mass onto the two nearest offset bins with linear (hat) weights.  The dual
map evaluates each stored profile at ``xi . x`` by linear interpolation in
``X`` and averages over directions with probability weights.  With this pair
the transposed projection matrix reproduces the back-projection exactly:

    back_project(g) = (dX / dV) * A.T @ (w_j * g)

and ``<R f, g>_sino = |S^{N-1}| <f, I g>_image`` holds to round-off.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .grid import ImageGrid, ImageND
from .norms import sphere_area


class TruncationError(ValueError):
    """The projection geometry does not cover the support of the density."""


@dataclass(frozen=True, eq=False)
class ProjectionGeometry:
    """Signed offsets ``linspace(-x_max, x_max, n_offsets)`` times stored directions.

    ``directions`` holds one representative per pair ``(xi, -xi)``;
    ``weights`` are the probability weights of the direction quadrature.
    """

    n_offsets: int
    x_max: float
    directions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        dirs = np.atleast_2d(np.asarray(self.directions, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if self.n_offsets < 2:
            raise ValueError("need at least two offsets")
        if not self.x_max > 0:
            raise ValueError("x_max must be positive")
        if dirs.shape[1] not in (2, 3):
            raise ValueError("directions must be 2D or 3D unit vectors")
        if np.max(np.abs(np.linalg.norm(dirs, axis=1) - 1.0)) > 1e-12:
            raise ValueError("directions must be unit vectors")
        if w.shape != (len(dirs),) or np.any(w < 0):
            raise ValueError("need one nonnegative weight per direction")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("direction weights must sum to 1")
        gram = dirs @ dirs.T
        np.fill_diagonal(gram, 0.0)
        if np.any(np.abs(np.abs(gram) - 1.0) < 1e-12):
            raise ValueError("directions contain duplicates or antipodal pairs")
        dirs.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "weights", w)

    @property
    def ndim(self) -> int:
        return self.directions.shape[1]

    @property
    def n_directions(self) -> int:
        return self.directions.shape[0]

    @property
    def offset_spacing(self) -> float:
        return 2.0 * self.x_max / (self.n_offsets - 1)

    @property
    def offsets(self) -> np.ndarray:
        return np.linspace(-self.x_max, self.x_max, self.n_offsets)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_directions, self.n_offsets)

    def sample_weights(self) -> np.ndarray:
        """Quadrature weight of each stored sample, shape ``(n_directions, 1)``."""
        scale = self.offset_spacing * sphere_area(self.ndim)
        return (scale * self.weights)[:, None]

    def angles(self) -> np.ndarray:
        if self.ndim != 2:
            raise ValueError("angles are only defined for 2D geometries")
        return np.mod(np.arctan2(self.directions[:, 1], self.directions[:, 0]), 2 * np.pi)

    def same_as(self, other: ProjectionGeometry) -> bool:
        return (
            self.n_offsets == other.n_offsets
            and np.isclose(self.x_max, other.x_max)
            and self.directions.shape == other.directions.shape
            and np.allclose(self.directions, other.directions)
            and np.allclose(self.weights, other.weights)
        )


def parallel_beam(n_angles: int, n_offsets: int, x_max: float) -> ProjectionGeometry:
    """2D geometry with ``n_angles`` uniform angles in ``[0, pi)``."""
    theta = np.arange(n_angles) * np.pi / n_angles
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return ProjectionGeometry(n_offsets, float(x_max), dirs, np.full(n_angles, 1.0 / n_angles))


def fibonacci_hemisphere(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors with ``z > 0`` (equal-area Fibonacci lattice)."""
    i = np.arange(n)
    z = 1.0 - (i + 0.5) / n
    r = np.sqrt(1.0 - z**2)
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def hemisphere_geometry(n_directions: int, n_offsets: int, x_max: float) -> ProjectionGeometry:
    """3D plane-integral geometry on a Fibonacci hemisphere with equal weights."""
    dirs = fibonacci_hemisphere(n_directions)
    return ProjectionGeometry(
        n_offsets, float(x_max), dirs, np.full(n_directions, 1.0 / n_directions)
    )


def geometry_for_grid(
    grid: ImageGrid, n_directions: int, n_offsets: int | None = None, x_max: float | None = None
) -> ProjectionGeometry:
    """Geometry whose offsets cover the grid's circumscribed ball.

    By default the offset spacing is the smallest cell spacing or finer.
    """
    if x_max is None:
        x_max = grid.circumradius()
    if n_offsets is None:
        n_offsets = int(np.ceil(2 * x_max / min(grid.spacing))) + 1
    if grid.ndim == 2:
        return parallel_beam(n_directions, n_offsets, x_max)
    return hemisphere_geometry(n_directions, n_offsets, x_max)


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Samples ``g(X_i, xi_j)`` stored direction-major, shape ``(n_directions, n_offsets)``."""

    geometry: ProjectionGeometry
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(self.geometry.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("sinogram values must be finite")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __add__(self, other: Sinogram) -> Sinogram:
        _check_geometry(self.geometry, other.geometry)
        return Sinogram(self.geometry, self.values + other.values)

    def __sub__(self, other: Sinogram) -> Sinogram:
        _check_geometry(self.geometry, other.geometry)
        return Sinogram(self.geometry, self.values - other.values)

    def __mul__(self, c: float) -> Sinogram:
        return Sinogram(self.geometry, self.values * float(c))

    __rmul__ = __mul__

    def expand_full(self) -> tuple[np.ndarray, np.ndarray]:
        """Directions and values over the double cover, appending ``(-X, -xi)`` copies."""
        dirs = np.concatenate([self.geometry.directions, -self.geometry.directions])
        vals = np.concatenate([self.values, self.values[:, ::-1]])
        return dirs, vals


def _check_geometry(a: ProjectionGeometry, b: ProjectionGeometry):
    if not a.same_as(b):
        raise ValueError("sinogram geometries differ")


# ---------------------------------------------------------------------------
# shared projection weights


def subcell_points(grid: ImageGrid, supersample: int) -> np.ndarray:
    """Sub-point coordinates, shape ``(size, supersample**ndim, ndim)``."""
    frac = (np.arange(supersample) + 0.5) / supersample - 0.5
    shifts = np.array(list(itertools.product(frac, repeat=grid.ndim))) * np.asarray(grid.spacing)
    return grid.points()[:, None, :] + shifts[None, :, :]


def _hat_bins(proj: np.ndarray, geom: ProjectionGeometry):
    """Left bin index, right weight and in-range mask for linear interpolation in X."""
    t = (proj + geom.x_max) / geom.offset_spacing
    inside = (t >= -1e-9) & (t <= geom.n_offsets - 1 + 1e-9)
    i0 = np.clip(np.floor(t).astype(np.int64), 0, geom.n_offsets - 2)
    frac = np.clip(t - i0, 0.0, 1.0)
    return i0, frac, inside


def _support_radius(f: ImageND, supersample: int) -> float:
    mask = f.values.ravel() != 0
    if not mask.any():
        return 0.0
    pts = subcell_points(f.grid, supersample)[mask]
    return float(np.sqrt(np.max(np.sum(pts**2, axis=-1))))


def forward_project(f: ImageND, geom: ProjectionGeometry, supersample: int = 2) -> Sinogram:
    """Discrete hyperplane integrals ``R f(X, xi)``.

    Linear in ``f``.  Per direction the deposited weights are nonnegative and
    their total equals the mass of ``f``, so ``sum_X Rf dX`` is exactly the
    same for every direction.

    Raises
    ------
    TruncationError
        If some nonzero cell projects outside ``[-x_max, x_max]``.
    """
    if f.grid.ndim != geom.ndim:
        raise ValueError(f"{f.grid.ndim}D image with a {geom.ndim}D geometry")
    radius = _support_radius(f, supersample)
    if radius > geom.x_max * (1 + 1e-12):
        raise TruncationError(
            f"support radius {radius:.6g} exceeds x_max={geom.x_max:.6g}; widen the geometry"
        )
    flat = f.values.ravel()
    mask = flat != 0
    out = np.zeros(geom.shape)
    if not mask.any():
        return Sinogram(geom, out)
    pts = subcell_points(f.grid, supersample)[mask].reshape(-1, geom.ndim)
    n_sub = supersample**geom.ndim
    mass = np.repeat(flat[mask] * f.grid.cell_volume / (n_sub * geom.offset_spacing), n_sub)
    n = geom.n_offsets
    for j, xi in enumerate(geom.directions):
        i0, frac, _ = _hat_bins(pts @ xi, geom)
        out[j] = np.bincount(i0, mass * (1.0 - frac), minlength=n) + np.bincount(
            i0 + 1, mass * frac, minlength=n
        )
    return Sinogram(geom, out)


@dataclass(frozen=True)
class TruncationReport:
    outside: int
    total: int

    @property
    def fraction(self) -> float:
        return self.outside / self.total if self.total else 0.0


def back_project(g: Sinogram, grid: ImageGrid, supersample: int = 2, report: bool = False):
    """Dual map ``I g(x)``: probability-weighted direction average of ``g(xi . x, xi)``.

    Each cell value is the mean over its sub-points.  Evaluation points whose
    offset falls outside ``[-x_max, x_max]`` contribute zero; with
    ``report=True`` their number is returned in a :class:`TruncationReport`.
    """
    geom = g.geometry
    if grid.ndim != geom.ndim:
        raise ValueError(f"{grid.ndim}D grid with a {geom.ndim}D geometry")
    pts = subcell_points(grid, supersample)
    n_sub = pts.shape[1]
    pts = pts.reshape(-1, geom.ndim)
    acc = np.zeros(len(pts))
    outside = 0
    for j, xi in enumerate(geom.directions):
        i0, frac, inside = _hat_bins(pts @ xi, geom)
        prof = g.values[j]
        val = prof[i0] * (1.0 - frac) + prof[i0 + 1] * frac
        acc += geom.weights[j] * np.where(inside, val, 0.0)
        outside += int(np.count_nonzero(~inside))
    image = ImageND(grid, acc.reshape(-1, n_sub).mean(axis=1))
    if report:
        return image, TruncationReport(outside, len(pts) * geom.n_directions)
    return image


# ---------------------------------------------------------------------------
# explicit matrices


class OperatorTooLarge(MemoryError):
    pass


def build_sparse_operator(
    geom: ProjectionGeometry, grid: ImageGrid, supersample: int = 2
) -> sp.csc_matrix:
    """Sparse matrix of :func:`forward_project`; rows ``j * n_offsets + i``, columns C-order cells."""
    if grid.ndim != geom.ndim:
        raise ValueError(f"{grid.ndim}D grid with a {geom.ndim}D geometry")
    if grid.circumradius() > geom.x_max * (1 + 1e-12):
        raise TruncationError("geometry does not cover the grid box")
    pts = subcell_points(grid, supersample)
    n_sub = pts.shape[1]
    pts = pts.reshape(-1, geom.ndim)
    cols = np.repeat(np.arange(grid.size), n_sub)
    scale = grid.cell_volume / (n_sub * geom.offset_spacing)
    rows, cc, vals = [], [], []
    for j, xi in enumerate(geom.directions):
        i0, frac, _ = _hat_bins(pts @ xi, geom)
        base = j * geom.n_offsets
        rows += [base + i0, base + i0 + 1]
        cc += [cols, cols]
        vals += [scale * (1.0 - frac), scale * frac]
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cc))),
        shape=(geom.n_directions * geom.n_offsets, grid.size),
    )
    return mat.tocsc()


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Explicit forward matrix plus the measures needed to form its adjoints.

    ``row_weights`` is the sinogram quadrature weight of each row and
    ``cell_volume`` the image weight of each column.
    """

    matrix: np.ndarray
    geometry: ProjectionGeometry
    grid: ImageGrid
    row_weights: np.ndarray
    cell_volume: float

    @property
    def adjoint_constant(self) -> float:
        """``c`` in ``<R f, g>_sino = c <f, I g>_image``; equals ``|S^{N-1}|``."""
        return sphere_area(self.geometry.ndim)

    def row_index(self, direction: int, offset: int) -> int:
        return direction * self.geometry.n_offsets + offset

    def apply(self, f: ImageND) -> Sinogram:
        return Sinogram(self.geometry, self.matrix @ f.values.ravel())

    def back_project(self, g: Sinogram) -> ImageND:
        """``I g`` formed from the transpose: ``(dX / dV) A^T (w_j g)``."""
        geom = self.geometry
        wg = (g.values * geom.weights[:, None]).ravel()
        scale = geom.offset_spacing / self.cell_volume
        return ImageND(self.grid, scale * (self.matrix.T @ wg))

    def weighted(self) -> np.ndarray:
        """Matrix between orthonormal coordinates of the two discrete L2 spaces."""
        return np.sqrt(self.row_weights)[:, None] * self.matrix / np.sqrt(self.cell_volume)

    @cached_property
    def svd(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Thin SVD of :meth:`weighted`; singular values are L2 operator quantities."""
        return np.linalg.svd(self.weighted(), full_matrices=False)


def build_dense_operator(
    geom: ProjectionGeometry, grid: ImageGrid, supersample: int = 2, max_entries: int = 20_000_000
) -> DenseOperator:
    n_rows = geom.n_directions * geom.n_offsets
    if n_rows * grid.size > max_entries:
        raise OperatorTooLarge(
            f"{n_rows} x {grid.size} matrix exceeds the cap of {max_entries} entries"
        )
    mat = build_sparse_operator(geom, grid, supersample).toarray()
    row_w = np.repeat(geom.sample_weights().ravel(), geom.n_offsets)
    return DenseOperator(mat, geom, grid, row_w, grid.cell_volume)


# ---------------------------------------------------------------------------
# range conditions


def homogeneous_monomials(directions: np.ndarray, degree: int) -> np.ndarray:
    """Design matrix of all degree-``degree`` monomials in the direction components."""
    ndim = directions.shape[1]
    cols = []
    for combo in itertools.combinations_with_replacement(range(ndim), degree):
        col = np.ones(len(directions))
        for axis in combo:
            col = col * directions[:, axis]
        cols.append(col)
    return np.stack(cols, axis=1)


@dataclass
class MomentReport:
    degrees: list[int]
    residuals: list[float]
    moments: list[np.ndarray]
    underdetermined: list[int]

    def max_residual(self, upto: int | None = None) -> float:
        vals = [
            r for k, r in zip(self.degrees, self.residuals) if (upto is None or k <= upto) and np.isfinite(r)
        ]
        return max(vals) if vals else 0.0


def check_range_moments(g: Sinogram, k_max: int, floor: float = 1e-8) -> MomentReport:
    """Moment conditions for the range of the Radon transform.

    For each ``k <= k_max`` the moments ``m_k(xi) = sum_X g X**k dX`` are fit by a
    homogeneous polynomial of degree ``k`` in ``xi`` (least squares over the stored
    directions).  The residual is ``||m_k - fit|| / (||m_k|| + floor * M_k)``, where
    ``M_k`` is the same moment of ``|g|``; the floor keeps exactly vanishing
    moments (e.g. odd moments of centred phantoms) from turning round-off into
    an O(1) residual.  Degrees with fewer directions than monomials are listed
    in ``underdetermined`` and get a NaN residual.
    """
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")
    geom = g.geometry
    X = geom.offsets
    dX = geom.offset_spacing
    report = MomentReport([], [], [], [])
    for k in range(k_max + 1):
        m = (g.values * X**k).sum(axis=1) * dX
        scale = (np.abs(g.values) * np.abs(X) ** k).sum(axis=1) * dX
        design = homogeneous_monomials(geom.directions, k)
        report.degrees.append(k)
        report.moments.append(m)
        if design.shape[1] > len(m):
            report.underdetermined.append(k)
            report.residuals.append(float("nan"))
            continue
        coef, *_ = np.linalg.lstsq(design, m, rcond=None)
        resid = np.linalg.norm(m - design @ coef)
        denom = np.linalg.norm(m) + floor * np.linalg.norm(scale)
        report.residuals.append(float(resid / denom) if denom > 0 else 0.0)
    return report
