"""Plain-text file formats for images, sinograms, partitions and reports.

Image CSV::

    dims=64,64;spacing=0.03125,0.03125;origin=-0.984375,-0.984375
    <row-major values, the last axis along each line>

Sinogram CSV::

    n_offsets=97;offset_spacing=0.03125;xmax=1.5;directions=[[1.0,0.0],...];weights=[...]
    <one line per stored direction>

``directions`` may also be ``@file.json`` (a JSON list of unit vectors, read
relative to the CSV); ``weights`` is optional and defaults to equal weights.
Numbers are written with 17 significant digits, so reading a file back
reproduces the stored doubles exactly.  Every writer goes through a temporary
file in the target directory followed by a rename.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .grid import ImageGrid, ImageND, PhantomSpec
from .radon import ProjectionGeometry, Sinogram

FLOAT_FMT = "%.17g"


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(x: float) -> str:
    return FLOAT_FMT % x


def _join(vals) -> str:
    return ",".join(_fmt(float(v)) for v in vals)


def _rows(values: np.ndarray, fmt=FLOAT_FMT) -> str:
    arr = values.reshape(-1, values.shape[-1])
    return "".join(",".join(fmt % v for v in row) + "\n" for row in arr)


def _parse_header(line: str) -> dict[str, str]:
    fields = {}
    for part in line.strip().split(";"):
        if not part:
            continue
        key, sep, val = part.partition("=")
        if not sep:
            raise ValueError(f"malformed header field {part!r}")
        fields[key.strip()] = val.strip()
    return fields


def _read_body(lines, expected: int) -> np.ndarray:
    text = [ln for ln in lines if ln.strip()]
    vals = np.array([float(v) for ln in text for v in ln.split(",")], dtype=float)
    if vals.size != expected:
        raise ValueError(f"expected {expected} values, found {vals.size}")
    return vals


# ---------------------------------------------------------------------------
# images


def image_header(grid: ImageGrid) -> str:
    return (
        f"dims={','.join(str(d) for d in grid.dims)};"
        f"spacing={_join(grid.spacing)};origin={_join(grid.origin)}"
    )


def format_image(image: ImageND, integer: bool = False) -> str:
    fmt = "%d" if integer else FLOAT_FMT
    return image_header(image.grid) + "\n" + _rows(image.values, fmt)


def write_image_csv(path, image: ImageND, integer: bool = False) -> Path:
    return atomic_write_text(path, format_image(image, integer))


def parse_grid_header(line: str) -> ImageGrid:
    h = _parse_header(line)
    try:
        dims = tuple(int(v) for v in h["dims"].split(","))
        spacing = tuple(float(v) for v in h["spacing"].split(","))
        origin = tuple(float(v) for v in h["origin"].split(","))
    except KeyError as exc:
        raise ValueError(f"image header lacks {exc.args[0]!r}") from None
    return ImageGrid(dims, spacing, origin)


def read_image_csv(path) -> ImageND:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    grid = parse_grid_header(lines[0])
    return ImageND(grid, _read_body(lines[1:], grid.size).reshape(grid.dims))


# ---------------------------------------------------------------------------
# sinograms


def sinogram_header(geom: ProjectionGeometry) -> str:
    dirs = json.dumps([[float(v) for v in d] for d in geom.directions])
    weights = json.dumps([float(w) for w in geom.weights])
    return (
        f"n_offsets={geom.n_offsets};offset_spacing={_fmt(geom.offset_spacing)};"
        f"xmax={_fmt(geom.x_max)};directions={dirs.replace(' ', '')};"
        f"weights={weights.replace(' ', '')}"
    )


def write_sinogram_csv(path, g: Sinogram) -> Path:
    return atomic_write_text(path, sinogram_header(g.geometry) + "\n" + _rows(g.values))


def parse_sinogram_header(line: str, base_dir=None) -> ProjectionGeometry:
    h = _parse_header(line)
    try:
        n_off = int(h["n_offsets"])
        x_max = float(h["xmax"])
        dir_field = h["directions"]
    except KeyError as exc:
        raise ValueError(f"sinogram header lacks {exc.args[0]!r}") from None
    if dir_field.startswith("@"):
        ref = Path(dir_field[1:])
        if base_dir is not None and not ref.is_absolute():
            ref = Path(base_dir) / ref
        dirs = np.asarray(json.loads(ref.read_text()), dtype=float)
    else:
        dirs = np.asarray(json.loads(dir_field), dtype=float)
    if "weights" in h:
        weights = np.asarray(json.loads(h["weights"]), dtype=float)
    else:
        weights = np.full(len(dirs), 1.0 / len(dirs))
    geom = ProjectionGeometry(n_off, x_max, dirs, weights)
    if "offset_spacing" in h:
        ds = float(h["offset_spacing"])
        if not np.isclose(ds, geom.offset_spacing, rtol=1e-12, atol=0):
            raise ValueError(
                f"offset_spacing={ds} disagrees with 2*xmax/(n_offsets-1)={geom.offset_spacing}"
            )
    return geom


def read_sinogram_csv(path) -> Sinogram:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    geom = parse_sinogram_header(lines[0], path.parent)
    n = geom.n_directions * geom.n_offsets
    return Sinogram(geom, _read_body(lines[1:], n).reshape(geom.shape))


def is_sinogram_file(path) -> bool:
    with open(path) as fh:
        return fh.readline().startswith("n_offsets=")


# ---------------------------------------------------------------------------
# PGM preview


def pgm_bytes(values: np.ndarray) -> bytes:
    """8-bit plain PGM of a 2D array (3D arrays: the middle slice along the first axis).

    Pixel ``p`` encodes ``min + (max - min) * p / 255``; the header comment
    records ``min`` and ``max``.  Rows run along the last array axis.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim == 3:
        v = v[v.shape[0] // 2]
    if v.ndim != 2:
        raise ValueError("PGM export needs a 2D or 3D array")
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo
    pix = np.zeros(v.shape, dtype=int) if span == 0 else np.rint((v - lo) / span * 255).astype(int)
    rows, cols = v.shape
    lines = [
        "P2",
        "# affine min-max scaling: value = min + (max - min) * p / 255",
        f"# min={lo!r} max={hi!r}",
        f"{cols} {rows}",
        "255",
    ]
    lines += [" ".join(str(p) for p in row) for row in pix]
    return ("\n".join(lines) + "\n").encode("ascii")


def write_pgm(path, values: np.ndarray) -> Path:
    return atomic_write_bytes(path, pgm_bytes(values))


def read_pgm(path) -> tuple[np.ndarray, float, float]:
    """Pixels and the ``(min, max)`` recorded by :func:`pgm_bytes`."""
    lines = Path(path).read_text().splitlines()
    if lines[0].strip() != "P2":
        raise ValueError("only plain (P2) PGM files are supported")
    lo = hi = None
    body = []
    for ln in lines[1:]:
        if ln.startswith("#"):
            fields = dict(t.split("=", 1) for t in ln[1:].split() if "=" in t)
            if "min" in fields and "max" in fields:
                lo, hi = float(fields["min"]), float(fields["max"])
            continue
        body.append(ln)
    cols, rows = (int(t) for t in body[0].split())
    pix = np.array([int(t) for ln in body[2:] for t in ln.split()]).reshape(rows, cols)
    return pix, lo, hi


# ---------------------------------------------------------------------------
# JSON and traces


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def read_phantom_json(path) -> PhantomSpec:
    data = read_json(path)
    if isinstance(data, dict):
        data = data.get("components", [])
    return PhantomSpec.from_list(data)


def write_phantom_json(path, spec: PhantomSpec) -> Path:
    return write_json(path, spec.to_list())


def write_table_csv(path, header, rows) -> Path:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) if isinstance(v, (int, np.integer)) else _fmt(float(v)) for v in row))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def write_energy_trace(path, trace) -> Path:
    """CSV ``iter,fidelity,perimeter,total`` from a list of energy breakdowns."""
    return write_table_csv(
        path,
        ["iter", "fidelity", "perimeter", "total"],
        [(i, e.fidelity, e.perimeter, e.total) for i, e in enumerate(trace)],
    )
