import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from radonms import io
from radonms.grid import ImageND, centered_grid, make_grid, shepp_logan
from radonms.mspc import EnergyBreakdown
from radonms.radon import Sinogram, hemisphere_geometry, parallel_beam


def test_image_round_trip_is_exact(tmp_path):
    grid = make_grid((5, 7), (0.1, 0.3), (-0.2, 1.0 / 3.0))
    vals = np.random.default_rng(0).standard_normal(grid.dims) * 10.0 ** np.arange(-3, 4)
    path = io.write_image_csv(tmp_path / "f.csv", ImageND(grid, vals))
    back = io.read_image_csv(path)
    assert back.grid == grid
    assert back.values.tobytes() == ImageND(grid, vals).values.tobytes()


def test_image_header_layout(tmp_path):
    grid = centered_grid(2, 1.0)
    text = io.format_image(ImageND(grid, [[1, 2], [3, 4]]), integer=True)
    assert text == "dims=2,2;spacing=1,1;origin=-0.5,-0.5\n1,2\n3,4\n"


def test_3d_image_round_trip(tmp_path):
    grid = centered_grid(3, 1.0, 3)
    vals = np.arange(27.0).reshape(3, 3, 3) / 7
    back = io.read_image_csv(io.write_image_csv(tmp_path / "v.csv", ImageND(grid, vals)))
    assert np.array_equal(back.values, vals)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(allow_nan=False, allow_infinity=False, width=64)))
def test_any_finite_image_survives(tmp_path_factory, vals):
    path = tmp_path_factory.mktemp("h") / "f.csv"
    grid = make_grid((3, 4), 0.5)
    back = io.read_image_csv(io.write_image_csv(path, ImageND(grid, vals)))
    assert np.array_equal(back.values, vals)


@pytest.mark.parametrize("geom", [parallel_beam(5, 9, 1.25), hemisphere_geometry(7, 11, 2.0)])
def test_sinogram_round_trip_is_exact(tmp_path, geom):
    g = Sinogram(geom, np.random.default_rng(1).standard_normal(geom.shape))
    back = io.read_sinogram_csv(io.write_sinogram_csv(tmp_path / "g.csv", g))
    assert back.geometry.same_as(geom)
    assert np.array_equal(back.geometry.directions, geom.directions)
    assert back.values.tobytes() == g.values.tobytes()
    assert io.is_sinogram_file(tmp_path / "g.csv")


def test_sinogram_directions_from_a_file(tmp_path):
    dirs = [[1.0, 0.0], [0.0, 1.0]]
    (tmp_path / "dirs.json").write_text(json.dumps(dirs))
    (tmp_path / "g.csv").write_text("n_offsets=3;xmax=1;directions=@dirs.json\n1,2,3\n4,5,6\n")
    g = io.read_sinogram_csv(tmp_path / "g.csv")
    assert g.geometry.weights.tolist() == [0.5, 0.5]
    assert g.values[1].tolist() == [4, 5, 6]


@pytest.mark.parametrize(
    "text",
    [
        "n_offsets=3;xmax=1;offset_spacing=0.5;directions=[[1,0]]\n1,2,3\n",
        "n_offsets=3;directions=[[1,0]]\n1,2,3\n",
        "n_offsets=3;xmax=1;directions=[[1,0]]\n1,2\n",
        "n_offsets=3;xmax=1;directions\n1,2,3\n",
        "",
    ],
)
def test_bad_sinogram_files(tmp_path, text):
    (tmp_path / "g.csv").write_text(text)
    with pytest.raises(ValueError):
        io.read_sinogram_csv(tmp_path / "g.csv")


def test_bad_image_files(tmp_path):
    (tmp_path / "a.csv").write_text("dims=2,2;spacing=1,1\n1,2\n3,4\n")
    with pytest.raises(ValueError):
        io.read_image_csv(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("dims=2,2;spacing=1,1;origin=0,0\n1,2\n3\n")
    with pytest.raises(ValueError):
        io.read_image_csv(tmp_path / "b.csv")


def test_pgm_round_trip_within_quantisation(tmp_path):
    vals = np.random.default_rng(2).uniform(-3, 5, (6, 9))
    pix, lo, hi = io.read_pgm(io.write_pgm(tmp_path / "p.pgm", vals))
    assert pix.shape == (6, 9) and pix.min() == 0 and pix.max() == 255
    recon = lo + (hi - lo) * pix / 255
    assert np.max(np.abs(recon - vals)) <= (hi - lo) / 510 + 1e-12


def test_pgm_of_constant_and_3d(tmp_path):
    pix, lo, hi = io.read_pgm(io.write_pgm(tmp_path / "c.pgm", np.full((3, 3), 2.0)))
    assert not pix.any() and lo == hi == 2.0
    cube = np.zeros((5, 4, 4))
    cube[2] = np.arange(16).reshape(4, 4)
    pix, lo, hi = io.read_pgm(io.write_pgm(tmp_path / "v.pgm", cube))
    assert pix.shape == (4, 4) and hi == 15.0
    with pytest.raises(ValueError):
        io.pgm_bytes(np.zeros(4))


def test_phantom_json_round_trip(tmp_path):
    spec = shepp_logan(0.8)
    assert io.read_phantom_json(io.write_phantom_json(tmp_path / "s.json", spec)) == spec
    (tmp_path / "d.json").write_text(json.dumps({"components": spec.to_list()}))
    assert io.read_phantom_json(tmp_path / "d.json") == spec


def test_atomic_writes_leave_no_temporaries(tmp_path):
    io.atomic_write_text(tmp_path / "x.txt", "one")
    io.atomic_write_text(tmp_path / "x.txt", "two")
    io.atomic_write_bytes(tmp_path / "sub" / "y.bin", b"\x00\x01")
    assert (tmp_path / "x.txt").read_text() == "two"
    assert sorted(p.name for p in tmp_path.rglob("*")) == ["sub", "x.txt", "y.bin"]


def test_failed_write_keeps_the_old_file(tmp_path):
    target = tmp_path / "x.txt"
    target.write_text("old")
    with pytest.raises(TypeError):
        io.atomic_write_text(target, None)
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]


def test_energy_trace_and_json(tmp_path):
    trace = [EnergyBreakdown(2.0, 1.0, 0.5), EnergyBreakdown(1.0, 1.0, 0.5)]
    text = io.write_energy_trace(tmp_path / "t.csv", trace).read_text().splitlines()
    assert text[0] == "iter,fidelity,perimeter,total"
    assert text[2] == "1,1,1,1.5"
    io.write_json(tmp_path / "r.json", {"a": np.arange(3), "b": np.float64(0.5)})
    assert io.read_json(tmp_path / "r.json") == {"a": [0, 1, 2], "b": 0.5}
    with pytest.raises(TypeError):
        io.write_json(tmp_path / "bad.json", {"x": object()})
