"""Potentials and fields generated by a 3D density, and the norm identities tying them to tomography.

With the probability-averaged back-projection ``I`` of :mod:`radonms.radon`
the potential of a density ``f`` is

    phi = I(R f) / (2 pi) = (1 / (4 pi)) * (f * 1/|x|),

the Newtonian potential, so ``-Laplace(phi) = f`` and ``E = -grad(phi)``.  In
the sinogram measure of :mod:`radonms.norms`

    ||R f||^2 = 8 pi^2 ||E||^2,

with ``||E||`` taken over all of space.  The grid only holds part of the field;
the remainder comes from a multipole expansion (charge, dipole and
quadrupole) fitted to the low sinogram moments.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft

from .grid import ImageGrid, ImageND, _check_same_grid
from .radon import ProjectionGeometry, Sinogram, back_project, forward_project

FIELD_CONSTANT = 8.0 * np.pi**2


class PaddingError(ValueError):
    """The density does not vanish on the outer layer of the grid."""


@dataclass(frozen=True, eq=False)
class ScalarField3:
    grid: ImageGrid
    values: np.ndarray

    def __post_init__(self):
        _check_3d(self.grid)
        values = np.asarray(self.values, dtype=float).reshape(self.grid.dims)
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class VectorField3:
    """Three components per cell, stored as an array of shape ``(3, *dims)``."""

    grid: ImageGrid
    values: np.ndarray

    def __post_init__(self):
        _check_3d(self.grid)
        values = np.asarray(self.values, dtype=float).reshape((3, *self.grid.dims))
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", values)

    def __sub__(self, other: VectorField3) -> VectorField3:
        _check_same_grid(self.grid, other.grid)
        return VectorField3(self.grid, self.values - other.values)

    def norm_squared(self) -> float:
        """Squared L2 norm over the grid cells (no far-field tail)."""
        return float(np.sum(self.values**2) * self.grid.cell_volume)


def _check_3d(grid: ImageGrid):
    if grid.ndim != 3:
        raise ValueError("electrostatics works on 3D grids only")


# ---------------------------------------------------------------------------
# potentials


def _box_integral(a: float, b: float, c: float) -> float:
    """Integral of ``1/|x|`` over ``[0, a] x [0, b] x [0, c]``."""
    d = np.sqrt(a * a + b * b + c * c)
    total = 0.0
    for p, q, r in ((a, b, c), (b, c, a), (c, a, b)):
        total += q * r * np.arcsinh(p / np.hypot(q, r))
        total -= 0.5 * p * p * np.arctan(q * r / (p * d))
    return float(total)


def cell_average_inverse_distance(spacing) -> float:
    """Average of ``1/|x|`` over the cell centred at the origin (``2.38008/h`` for a cube)."""
    h = np.broadcast_to(np.asarray(spacing, dtype=float), (3,))
    return 8.0 * _box_integral(*(h / 2)) / float(np.prod(h))


def _kernel(grid: ImageGrid) -> np.ndarray:
    """``1/|x|`` on the doubled offset lattice in FFT (wrap-around) order."""
    axes = []
    for n, h in zip(grid.dims, grid.spacing):
        k = np.arange(2 * n)
        axes.append(np.where(k < n, k, k - 2 * n) * h)
    r = np.sqrt(sum(m**2 for m in np.meshgrid(*axes, indexing="ij")))
    r[0, 0, 0] = 1.0
    kern = 1.0 / r
    kern[0, 0, 0] = cell_average_inverse_distance(grid.spacing)
    return kern


def potential_from_density(f: ImageND, boundary_tol: float = 1e-6) -> ScalarField3:
    """Newtonian potential ``(1/(4 pi)) f * 1/|x|`` by zero-padded FFT convolution.

    Raises :class:`PaddingError` when ``|f|`` on the outer cell layer exceeds
    ``boundary_tol * max|f|``: the grid is then too small for the density.
    """
    _check_3d(f.grid)
    v = f.values
    peak = np.max(np.abs(v))
    if peak > 0:
        shell = max(np.max(np.abs(np.take(v, [0, -1], axis=a))) for a in range(3))
        if shell > boundary_tol * peak:
            raise PaddingError(
                f"density reaches {shell / peak:.2e} of its peak on the grid boundary"
            )
    shape = tuple(2 * n for n in f.grid.dims)
    spec = fft.rfftn(v, shape) * fft.rfftn(_kernel(f.grid))
    conv = fft.irfftn(spec, shape)[tuple(slice(0, n) for n in f.grid.dims)]
    return ScalarField3(f.grid, conv * f.grid.cell_volume / (4.0 * np.pi))


def potential_from_sinogram(g: Sinogram, grid: ImageGrid, supersample: int = 2) -> ScalarField3:
    """``phi_g = I(g) / (2 pi)``; the dual of the projection on a 3D grid."""
    _check_3d(grid)
    if g.geometry.ndim != 3:
        raise ValueError("need a 3D sinogram")
    bp = back_project(g, grid, supersample=supersample)
    return ScalarField3(grid, bp.values / (2.0 * np.pi))


def potential_via_projection(
    f: ImageND, geometry: ProjectionGeometry, supersample: int = 2
) -> ScalarField3:
    """``phi = I(R f) / (2 pi)``, the tomographic route to the same potential."""
    return potential_from_sinogram(forward_project(f, geometry, supersample), f.grid, supersample)


def grad_potential(phi: ScalarField3) -> VectorField3:
    """``E = -grad(phi)``: centred differences inside, one-sided on the boundary."""
    comps = np.gradient(phi.values, *phi.grid.spacing, edge_order=1)
    return VectorField3(phi.grid, -np.stack(comps))


# ---------------------------------------------------------------------------
# differential operators


def _interior(width: int = 2):
    return (slice(width, -width),) * 3


def divergence(E: VectorField3) -> np.ndarray:
    """Sum of centred differences of the components (one-sided on the boundary)."""
    h = E.grid.spacing
    return sum(np.gradient(E.values[a], h[a], axis=a, edge_order=1) for a in range(3))


def curl(E: VectorField3) -> np.ndarray:
    h = E.grid.spacing
    d = lambda comp, axis: np.gradient(E.values[comp], h[axis], axis=axis, edge_order=1)
    return np.stack([d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)])


def curl_ratio(E: VectorField3, width: int = 2) -> float:
    """``||curl E|| / ||E||`` over the interior (exact zero for gradient fields)."""
    sl = (slice(None),) + _interior(width)
    den = np.linalg.norm(E.values[sl])
    return float(np.linalg.norm(curl(E)[sl]) / den) if den > 0 else 0.0


def laplacian(phi: ScalarField3, stride: int = 1) -> np.ndarray:
    """7-point Laplacian with neighbours ``stride`` cells away; zero on the outer ``stride`` layers.

    ``stride=2`` is algebraically the composition of two centred first
    differences, i.e. ``divergence(grad_potential(phi)) == -laplacian(phi, 2)``
    in the interior.
    """
    v = phi.values
    out = np.zeros_like(v)
    s = stride
    core = (slice(s, -s),) * 3
    for a, h in enumerate(phi.grid.spacing):
        fwd = [slice(s, -s)] * 3
        bwd = [slice(s, -s)] * 3
        fwd[a] = slice(2 * s, None)
        bwd[a] = slice(None, -2 * s)
        out[core] += (v[tuple(fwd)] - 2.0 * v[core] + v[tuple(bwd)]) / (s * h) ** 2
    return out


# ---------------------------------------------------------------------------
# far field


def outside_inverse_fourth(grid: ImageGrid, center=None, order: int = 48) -> float:
    """``int |x - c|^-4 dV`` over the complement of the grid box.

    Evaluated as the flux of ``(x - c) / |x - c|^4`` through the box surface,
    with tensor Gauss-Legendre quadrature on each face.
    """
    c = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    lo, hi = grid.box()
    if np.any(c <= lo) or np.any(c >= hi):
        raise ValueError("centre must lie inside the grid box")
    t, w = np.polynomial.legendre.leggauss(order)
    total = 0.0
    for a in range(3):
        u, v = [b for b in range(3) if b != a]
        su = 0.5 * (hi[u] - lo[u])
        sv = 0.5 * (hi[v] - lo[v])
        pu = lo[u] + su * (t + 1) - c[u]
        pv = lo[v] + sv * (t + 1) - c[v]
        PU, PV = np.meshgrid(pu, pv, indexing="ij")
        W = np.outer(w, w) * su * sv
        for plane in (lo[a], hi[a]):
            dn = abs(plane - c[a])
            total += np.sum(W * dn / (dn**2 + PU**2 + PV**2) ** 2)
    return float(total)


def _box_surface(grid: ImageGrid, order: int):
    """Gauss-Legendre nodes, weights and outward normals on the six faces of the grid box."""
    lo, hi = grid.box()
    t, w = np.polynomial.legendre.leggauss(order)
    pts, wts, nrm = [], [], []
    for a in range(3):
        u, v = [b for b in range(3) if b != a]
        su = 0.5 * (hi[u] - lo[u])
        sv = 0.5 * (hi[v] - lo[v])
        PU, PV = np.meshgrid(lo[u] + su * (t + 1), lo[v] + sv * (t + 1), indexing="ij")
        W = (np.outer(w, w) * su * sv).ravel()
        for plane, sign in ((lo[a], -1.0), (hi[a], 1.0)):
            x = np.empty((W.size, 3))
            x[:, a] = plane
            x[:, u] = PU.ravel()
            x[:, v] = PV.ravel()
            n = np.zeros(3)
            n[a] = sign
            pts.append(x)
            wts.append(W)
            nrm.append(np.broadcast_to(n, x.shape))
    return np.concatenate(pts), np.concatenate(wts), np.concatenate(nrm)


def multipole_field(x: np.ndarray, charge: float, dipole=None, second_moment=None):
    """Potential and gradient of a truncated multipole expansion at points ``x``.

    ``second_moment`` is ``M = int x x^T f``; its traceless part drives the
    quadrupole term.
    """
    r2 = np.sum(x**2, axis=1)
    r = np.sqrt(r2)
    phi = charge / r
    grad = -charge * x / r[:, None] ** 3
    if dipole is not None:
        p = np.asarray(dipole, dtype=float)
        px = x @ p
        phi = phi + px / r**3
        grad = grad + p / r[:, None] ** 3 - 3.0 * (px / r**5)[:, None] * x
    if second_moment is not None:
        M = np.asarray(second_moment, dtype=float)
        Qm = 3.0 * M - np.trace(M) * np.eye(3)
        Qx = x @ Qm
        xQx = np.sum(Qx * x, axis=1)
        phi = phi + 0.5 * xQx / r**5
        grad = grad + Qx / r[:, None] ** 5 - 2.5 * (xQx / r**7)[:, None] * x
    return phi / (4.0 * np.pi), grad / (4.0 * np.pi)


def far_field_energy(
    grid: ImageGrid, charge: float, dipole=None, second_moment=None, order: int = 48
) -> float:
    """``||E||^2`` outside the grid box for the multipole expansion about the origin.

    The exterior potential is harmonic and decays, so its energy is the
    surface integral ``-int phi (n . grad phi) dA`` over the box.
    """
    lo, hi = grid.box()
    if np.any(lo >= 0) or np.any(hi <= 0):
        raise ValueError("the grid box must contain the origin")
    x, w, n = _box_surface(grid, order)
    phi, grad = multipole_field(x, charge, dipole, second_moment)
    return float(-np.sum(w * phi * np.sum(n * grad, axis=1)))


def sinogram_charge(g: Sinogram) -> float:
    """Total charge from the zeroth moment: the mean over directions of ``int g dX``."""
    m0 = g.values.sum(axis=1) * g.geometry.offset_spacing
    return float(np.sum(m0 * g.geometry.weights))


def sinogram_multipoles(g: Sinogram) -> tuple[float, np.ndarray, np.ndarray]:
    """Charge, dipole and second-moment tensor fitted to the first three sinogram moments.

    ``int g X dX = xi . p`` and ``int g X^2 dX = xi^T M xi`` for data in the range;
    both are solved by least squares over the stored directions.
    """
    geom = g.geometry
    X = geom.offsets
    dX = geom.offset_spacing
    xi = geom.directions
    m1 = (g.values * X).sum(axis=1) * dX
    m2 = (g.values * X**2).sum(axis=1) * dX
    p, *_ = np.linalg.lstsq(xi, m1, rcond=None)
    pairs = [(i, j) for i in range(3) for j in range(i, 3)]
    design = np.stack([xi[:, i] * xi[:, j] for i, j in pairs], axis=1)
    c, *_ = np.linalg.lstsq(design, m2, rcond=None)
    M = np.zeros((3, 3))
    for (i, j), cij in zip(pairs, c):
        if i == j:
            M[i, i] = cij
        else:
            M[i, j] = M[j, i] = 0.5 * cij
    return sinogram_charge(g), p, M


def sinogram_tail_energy(g: Sinogram, grid: ImageGrid) -> float:
    """Far-field energy outside ``grid`` of the charge whose projections are ``g``."""
    return far_field_energy(grid, *sinogram_multipoles(g))


# ---------------------------------------------------------------------------
# verification reports


@dataclass
class ResidualReport:
    lemma: str
    resolution: dict
    residual: float
    values: dict = field(default_factory=dict)
    refinement_trend: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def refinement_trend(reports, key: str = "residual") -> str:
    """``"decreasing"`` when the residuals strictly decrease along ``reports``."""
    vals = [getattr(r, key) for r in reports]
    return "decreasing" if all(b < a for a, b in zip(vals, vals[1:])) else "not-decreasing"


def _relative_gap(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


def _resolution(grid: ImageGrid, geometry: ProjectionGeometry) -> dict:
    return {
        "dims": list(grid.dims),
        "spacing": list(grid.spacing),
        "n_directions": geometry.n_directions,
        "n_offsets": geometry.n_offsets,
    }


def verify_norm_identity(
    f: ImageND, geometry: ProjectionGeometry, supersample: int = 2
) -> ResidualReport:
    """Compare ``||R f||^2`` with ``8 pi^2 ||grad I(R f) / (2 pi)||^2``.

    Both sides use the shared measures: the sinogram norm for ``R f`` and cell
    volumes plus the monopole tail for the field.
    """
    _check_3d(f.grid)
    g = forward_project(f, geometry, supersample)
    lhs = float(np.sum(g.values**2 * geometry.sample_weights()))
    E = grad_potential(potential_from_sinogram(g, f.grid, supersample))
    grid_part = E.norm_squared()
    tail = sinogram_tail_energy(g, f.grid)
    rhs = FIELD_CONSTANT * (grid_part + tail)
    return ResidualReport(
        "norm-identity",
        _resolution(f.grid, geometry),
        _relative_gap(lhs, rhs),
        {"sinogram_side": lhs, "field_side": rhs, "tail_fraction": tail / (grid_part + tail) if rhs else 0.0},
    )


def verify_divergence_identity(f: ImageND, width: int = 2) -> ResidualReport:
    """Residuals of ``-Laplace(phi) = f`` and ``div E = f`` on the grid interior.

    ``laplacian_residual`` uses the compact 7-point stencil;
    ``divergence_residual`` uses centred differences of :func:`grad_potential`.
    ``stencil_mismatch`` compares ``div E`` with the stride-2 7-point stencil,
    which is the same difference composition and agrees to round-off.
    """
    phi = potential_from_density(f)
    E = grad_potential(phi)
    core = _interior(width)
    ref = f.values[core]
    scale = np.linalg.norm(ref)
    rel = lambda a: float(np.linalg.norm(a - ref) / scale) if scale > 0 else float(np.linalg.norm(a))
    div = divergence(E)[core]
    lap = -laplacian(phi)[core]
    wide = -laplacian(phi, stride=2)[core]
    dscale = max(np.linalg.norm(div), np.finfo(float).tiny)
    mismatch = float(np.linalg.norm(div - wide) / dscale) if np.any(div) else 0.0
    lap_res = rel(lap)
    div_res = rel(div)
    return ResidualReport(
        "divergence-identity",
        {"dims": list(f.grid.dims), "spacing": list(f.grid.spacing)},
        max(lap_res, div_res),
        {
            "laplacian_residual": lap_res,
            "divergence_residual": div_res,
            "stencil_mismatch": mismatch,
        },
    )


@dataclass
class FidelityPair:
    sinogram_fidelity: float
    field_fidelity: float

    @property
    def relative_gap(self) -> float:
        return _relative_gap(self.sinogram_fidelity, self.field_fidelity)


def fidelity_equivalence(f: ImageND, g: Sinogram, supersample: int = 2) -> FidelityPair:
    """``||R f - g||^2`` against ``8 pi^2 ||E - E_g||^2`` with ``E_g = -grad I(g) / (2 pi)``.

    If ``g`` lies outside the range of ``R`` the two numbers are still
    computed, but nothing forces them to agree.
    """
    rf = forward_project(f, g.geometry, supersample)
    diff = Sinogram(g.geometry, rf.values - g.values)
    sino = float(np.sum(diff.values**2 * g.geometry.sample_weights()))
    E = grad_potential(potential_from_sinogram(diff, f.grid, supersample))
    tail = sinogram_tail_energy(diff, f.grid)
    return FidelityPair(sino, FIELD_CONSTANT * (E.norm_squared() + tail))


__all__ = [
    "FIELD_CONSTANT",
    "PaddingError",
    "ScalarField3",
    "VectorField3",
    "cell_average_inverse_distance",
    "potential_from_density",
    "potential_from_sinogram",
    "potential_via_projection",
    "grad_potential",
    "divergence",
    "curl",
    "curl_ratio",
    "laplacian",
    "outside_inverse_fourth",
    "far_field_energy",
    "sinogram_charge",
    "multipole_field",
    "sinogram_multipoles",
    "sinogram_tail_energy",
    "ResidualReport",
    "refinement_trend",
    "verify_norm_identity",
    "verify_divergence_identity",
    "FidelityPair",
    "fidelity_equivalence",
]
