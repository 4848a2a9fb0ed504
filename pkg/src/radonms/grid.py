"""Regular grids, sampled densities, ellipse/ellipsoid phantoms and error metrics.

Axis ``i`` of ``ImageND.values`` corresponds to the physical coordinate ``x_i``;
cell ``(0, ..., 0)`` is centred at ``grid.origin``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ImageGrid:
    dims: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.dims) == len(self.spacing) == len(self.origin)):
            raise ValueError("dims, spacing and origin must have the same length")
        if len(self.dims) not in (2, 3):
            raise ValueError(f"only 2D and 3D grids are supported, got {len(self.dims)}D")
        if any(int(d) < 2 for d in self.dims):
            raise ValueError(f"every axis needs at least 2 cells, got dims={self.dims}")
        if any(not np.isfinite(s) or s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive and finite, got {self.spacing}")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def extent(self) -> tuple[float, ...]:
        return tuple(d * s for d, s in zip(self.dims, self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing[axis] * np.arange(self.dims[axis])

    def cell_center(self, index: Sequence[int]) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(self.spacing) * np.asarray(index)

    def mesh(self) -> tuple[np.ndarray, ...]:
        return np.meshgrid(*(self.axis_coords(a) for a in range(self.ndim)), indexing="ij")

    def points(self) -> np.ndarray:
        """Cell centres as an ``(size, ndim)`` array in C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners of the union of all cells."""
        half = 0.5 * np.asarray(self.spacing)
        lo = np.asarray(self.origin) - half
        hi = lo + np.asarray(self.extent)
        return lo, hi

    def circumradius(self) -> float:
        """Largest distance from the coordinate origin to a corner of the grid box."""
        lo, hi = self.box()
        return float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))

    def face_areas(self) -> tuple[float, ...]:
        """Area of a cell face normal to each axis."""
        vol = self.cell_volume
        return tuple(vol / s for s in self.spacing)


def make_grid(dims, spacing, origin=None) -> ImageGrid:
    """Build an :class:`ImageGrid`.

    ``dims`` and ``spacing`` may be scalars, broadcast over ``len(dims)`` axes.
    When ``origin`` is omitted the grid is centred on the coordinate origin.
    """
    dims = tuple(int(d) for d in np.atleast_1d(dims))
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (len(dims),))
    if origin is None:
        origin = -0.5 * (np.asarray(dims) - 1) * spacing
    origin = np.broadcast_to(np.asarray(origin, dtype=float), (len(dims),))
    return ImageGrid(dims, tuple(float(s) for s in spacing), tuple(float(o) for o in origin))


def centered_grid(n: int, half_width: float, ndim: int = 2) -> ImageGrid:
    """``n**ndim`` cells exactly covering ``[-half_width, half_width]**ndim``."""
    return make_grid((n,) * ndim, 2.0 * half_width / n)


@dataclass(frozen=True, eq=False)
class ImageND:
    grid: ImageGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != tuple(self.grid.dims):
            if values.size != self.grid.size:
                raise ValueError(
                    f"{values.size} values do not fit a grid with dims {self.grid.dims}"
                )
            values = values.reshape(self.grid.dims)
        if not np.all(np.isfinite(values)):
            raise ValueError("image values must be finite")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __add__(self, other: ImageND) -> ImageND:
        _check_same_grid(self.grid, other.grid)
        return ImageND(self.grid, self.values + other.values)

    def __sub__(self, other: ImageND) -> ImageND:
        _check_same_grid(self.grid, other.grid)
        return ImageND(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> ImageND:
        return ImageND(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def total_mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)


def zeros(grid: ImageGrid) -> ImageND:
    return ImageND(grid, np.zeros(grid.dims))


def sample_function(func, grid: ImageGrid) -> ImageND:
    """Evaluate ``func(*coords)`` at every cell centre."""
    return ImageND(grid, func(*grid.mesh()))


def gaussian(grid: ImageGrid, center=None, width: float = 1.0, amplitude: float = 1.0) -> ImageND:
    """Sample ``amplitude * exp(-|x - center|**2 / width**2)``."""
    center = np.zeros(grid.ndim) if center is None else np.asarray(center, dtype=float)
    r2 = sum((m - c) ** 2 for m, c in zip(grid.mesh(), center))
    return ImageND(grid, amplitude * np.exp(-r2 / width**2))


def _check_same_grid(a: ImageGrid, b: ImageGrid):
    if a.dims != b.dims or not np.allclose(a.spacing, b.spacing) or not np.allclose(a.origin, b.origin):
        raise ValueError(f"grid mismatch: {a} vs {b}")


# ---------------------------------------------------------------------------
# phantoms


@dataclass(frozen=True)
class Ellipsoid:
    """Ellipse (2D) or ellipsoid (3D) with additive density ``value``.

    ``angle`` rotates the semi-axes counter-clockwise in the ``(x0, x1)`` plane.
    """

    center: tuple[float, ...]
    semi_axes: tuple[float, ...]
    value: float
    angle: float = 0.0

    def __post_init__(self):
        if len(self.center) != len(self.semi_axes):
            raise ValueError("center and semi_axes must have the same length")
        if any(a <= 0 for a in self.semi_axes):
            raise ValueError(f"semi-axes must be positive, got {self.semi_axes}")

    def contains(self, *coords: np.ndarray) -> np.ndarray:
        shifted = [c - c0 for c, c0 in zip(coords, self.center)]
        ca, sa = np.cos(self.angle), np.sin(self.angle)
        u = ca * shifted[0] + sa * shifted[1]
        v = -sa * shifted[0] + ca * shifted[1]
        local = [u, v, *shifted[2:]]
        return sum((q / a) ** 2 for q, a in zip(local, self.semi_axes)) <= 1.0


@dataclass(frozen=True)
class PhantomSpec:
    components: tuple[Ellipsoid, ...] = field(default_factory=tuple)

    def __add__(self, other: PhantomSpec) -> PhantomSpec:
        return PhantomSpec(tuple(self.components) + tuple(other.components))

    def to_list(self) -> list[dict]:
        return [
            {
                "center": list(c.center),
                "semi_axes": list(c.semi_axes),
                "value": c.value,
                "angle": c.angle,
            }
            for c in self.components
        ]

    @classmethod
    def from_list(cls, items) -> PhantomSpec:
        comps = []
        for item in items:
            comps.append(
                Ellipsoid(
                    center=tuple(float(v) for v in item["center"]),
                    semi_axes=tuple(float(v) for v in item["semi_axes"]),
                    value=float(item["value"]),
                    angle=float(item.get("angle", 0.0)),
                )
            )
        return cls(tuple(comps))


def rasterize_phantom(spec: PhantomSpec, grid: ImageGrid) -> ImageND:
    """Cell-centre sampling with additive overlap; no antialiasing."""
    coords = grid.mesh()
    values = np.zeros(grid.dims)
    for comp in spec.components:
        if len(comp.center) != grid.ndim:
            raise ValueError(f"{len(comp.center)}D component on a {grid.ndim}D grid")
        values += comp.value * comp.contains(*coords)
    return ImageND(grid, values)


def disk(center, radius: float, value: float = 1.0) -> Ellipsoid:
    center = tuple(float(c) for c in center)
    return Ellipsoid(center, (float(radius),) * len(center), float(value))


SHEPP_LOGAN_VALUES = {
    "original": (2.0, -0.98, -0.02, -0.02, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01),
    "modified": (1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1),
}


def shepp_logan(scale: float = 1.0, variant: str = "original") -> PhantomSpec:
    """Shepp-Logan head phantom inside ``[-scale, scale]**2``.

    ``variant="original"`` uses the 1974 intensities (skull 2.0, brain 1.02,
    features within 0.02-0.04 of the brain); ``"modified"`` uses Toft's
    higher-contrast intensities.  The geometry is the same.  The standard table
    is given in (row, column) orientation; here ``x0`` is the horizontal axis
    and ``x1`` the vertical one.
    """
    if variant not in SHEPP_LOGAN_VALUES:
        raise ValueError(f"variant must be one of {sorted(SHEPP_LOGAN_VALUES)}")
    shapes = [
        # a, b, x0, y0, angle (deg)
        (0.69, 0.92, 0.0, 0.0, 0.0),
        (0.6624, 0.874, 0.0, -0.0184, 0.0),
        (0.11, 0.31, 0.22, 0.0, -18.0),
        (0.16, 0.41, -0.22, 0.0, 18.0),
        (0.21, 0.25, 0.0, 0.35, 0.0),
        (0.046, 0.046, 0.0, 0.1, 0.0),
        (0.046, 0.046, 0.0, -0.1, 0.0),
        (0.046, 0.023, -0.08, -0.605, 0.0),
        (0.023, 0.023, 0.0, -0.606, 0.0),
        (0.023, 0.046, 0.06, -0.605, 0.0),
    ]
    return PhantomSpec(
        tuple(
            Ellipsoid((x0 * scale, y0 * scale), (a * scale, b * scale), v, np.deg2rad(ang))
            for v, (a, b, x0, y0, ang) in zip(SHEPP_LOGAN_VALUES[variant], shapes)
        )
    )


def two_disks(scale: float = 1.0) -> PhantomSpec:
    """Two non-overlapping disks of different density; a small piecewise-constant fixture."""
    return PhantomSpec(
        (
            disk((-0.35 * scale, 0.1 * scale), 0.3 * scale, 1.0),
            disk((0.4 * scale, -0.15 * scale), 0.2 * scale, 0.5),
        )
    )


# ---------------------------------------------------------------------------
# metrics


def l2_norm(image: ImageND) -> float:
    """Volume-weighted discrete L2 norm."""
    return float(np.sqrt(np.sum(image.values**2) * image.grid.cell_volume))


def relative_l2_error(a: ImageND, b: ImageND) -> float:
    """``||a - b|| / ||b||`` with the volume-weighted norm.

    Not symmetric: the reference ``b`` sets the scale. If ``b`` is identically
    zero the absolute norm ``||a||`` is returned instead.
    """
    _check_same_grid(a.grid, b.grid)
    ref = l2_norm(b)
    diff = l2_norm(a - b)
    if ref == 0.0:
        return l2_norm(a)
    return diff / ref
