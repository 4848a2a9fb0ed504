import io as stdio
import json

import numpy as np
import pytest

from radonms import cli
from radonms import io
from radonms.grid import two_disks


def call(*argv):
    out = stdio.StringIO()
    code = cli.run([str(a) for a in argv], stdout=out)
    text = out.getvalue().strip()
    return code, (json.loads(text) if text else None)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    io.write_phantom_json(d / "two_disks.json", two_disks())
    assert call("phantom", "--spec", d / "two_disks.json", "--grid", 128, "--out", d / "f.csv")[0] == 0
    assert call("project", "--in", d / "f.csv", "--angles", 90, "--out", d / "g.csv")[0] == 0
    return d


def test_round_trip_through_files(pipeline):
    d = pipeline
    code, summary = call("fbp", "--in", d / "g.csv", "--out", d / "rec.csv", "--compare", d / "f.csv")
    assert code == 0
    assert summary["relative_l2_error"] < 0.15
    assert (d / "rec.pgm").exists() and (d / "f.pgm").exists() and (d / "g.pgm").exists()
    assert io.read_image_csv(d / "rec.csv").grid == io.read_image_csv(d / "f.csv").grid


def test_zero_noise_copies_the_sinogram(pipeline):
    d = pipeline
    code, summary = call("noise", "--in", d / "g.csv", "--epsilon", 0, "--seed", 7, "--out", d / "g0.csv")
    assert code == 0 and summary["distance"] == 0.0
    assert (d / "g0.csv").read_bytes() == (d / "g.csv").read_bytes()


def test_verify_range_passes_on_projections_and_fails_on_noise(pipeline):
    d = pipeline
    code, summary = call("verify-range", "--in", d / "g.csv", "--kmax", 2)
    assert code == 0 and max(summary["residuals"].values()) < 1e-3
    assert call("noise", "--in", d / "g.csv", "--epsilon", 0.5, "--relative", "--out", d / "gn.csv")[0] == 0
    code, summary = call("verify-range", "--in", d / "gn.csv", "--kmax", 2)
    assert code == 3 and summary["status"] == "verification-failed"


def test_relative_noise_level(pipeline):
    d = pipeline
    g = io.read_sinogram_csv(d / "g.csv")
    from radonms.norms import sinogram_norm

    _, summary = call("noise", "--in", d / "g.csv", "--epsilon", 0.1, "--relative", "--out", d / "g1.csv")
    assert summary["distance"] == pytest.approx(0.1 * sinogram_norm(g), rel=1e-12)


def test_seed_falls_back_to_the_environment(pipeline, monkeypatch):
    d = pipeline
    call("noise", "--in", d / "g.csv", "--epsilon", 1e-3, "--seed", 11, "--out", d / "a.csv")
    monkeypatch.setenv("RADONMS_SEED", "11")
    call("noise", "--in", d / "g.csv", "--epsilon", 1e-3, "--out", d / "b.csv")
    assert (d / "a.csv").read_bytes() == (d / "b.csv").read_bytes()
    monkeypatch.setenv("RADONMS_SEED", "eleven")
    assert call("noise", "--in", d / "g.csv", "--epsilon", 1e-3, "--out", d / "c.csv")[0] == 2


def test_config_file_with_flag_override(pipeline):
    d = pipeline
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps({"in": str(d / "g.csv"), "epsilon": 0.2, "seed": 3, "out": str(d / "n1.csv")}))
    assert call("noise", "--config", cfg)[0] == 0
    assert call("noise", "--config", cfg, "--seed", 4, "--out", d / "n2.csv")[0] == 0
    call("noise", "--in", d / "g.csv", "--epsilon", 0.2, "--seed", 4, "--out", d / "n3.csv")
    assert (d / "n2.csv").read_bytes() == (d / "n3.csv").read_bytes()
    assert (d / "n1.csv").read_bytes() != (d / "n2.csv").read_bytes()


def test_mspc_outputs(tmp_path):
    call("phantom", "--spec", "two_disks", "--grid", 32, "--out", tmp_path / "f.csv")
    call("project", "--in", tmp_path / "f.csv", "--angles", 30, "--out", tmp_path / "g.csv")
    code, summary = call(
        "mspc", "--in", tmp_path / "g.csv", "--like", tmp_path / "f.csv", "--regions", 3,
        "--beta", 1e-4, "--out", tmp_path / "pc.csv", "--compare", tmp_path / "f.csv",
    )
    assert code == 0
    assert summary["label_agreement"] > 0.95
    labels = io.read_image_csv(tmp_path / "pc_labels.csv").values
    assert set(np.unique(labels)) <= {1, 2, 3}
    trace = np.loadtxt(tmp_path / "pc_trace.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(trace[:, 3]) <= 0)


def test_spectrum_and_sweep(tmp_path):
    code, summary = call("spectrum", "--grid", 8, "--angles", 12, "--out", tmp_path / "s")
    assert code == 0 and summary["sigma_min"] <= summary["sigma_1"]
    sig = np.loadtxt(tmp_path / "s_sigma.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(sig[:, 1]) <= 0)
    code, summary = call("sweep", "--schedule", "eps3", "--out", tmp_path / "w.csv")
    assert code == 0 and not summary["premise_ok"]


def test_electro_suite_failure_is_exit_3(tmp_path):
    # too coarse for the 10% fidelity tolerance
    code, summary = call(
        "verify-electro", "--levels-grid", 12, 16, "--levels-directions", 32, 64,
        "--div-levels", 16, 20, "--out", tmp_path / "e.json",
    )
    assert code == 3
    assert json.loads((tmp_path / "e.json").read_text())["residuals"]["fidelity-equivalence"]


@pytest.mark.parametrize(
    "argv",
    [
        ["explode"],
        ["fbp", "--in", "missing.csv", "--out", "x.csv"],
        ["fbp", "--in", "{g}", "--out", "{d}/x.csv", "--band-fraction", "1.5"],
        ["phantom", "--spec", "nonexistent_phantom", "--out", "{d}/x.csv"],
        ["phantom", "--spec", "two_disks", "--grid", 1, "--out", "{d}/x.csv"],
        ["noise", "--in", "{g}", "--out", "{d}/x.csv"],
        ["noise", "--in", "{g}", "--epsilon", -1, "--out", "{d}/x.csv"],
        ["sweep", "--schedule", "eps4", "--out", "{d}/x.csv"],
        ["verify-range", "--in", "{g}", "--kmax", -1],
        ["project", "--in", "{g}", "--out", "{d}/x.csv"],
    ],
)
def test_configuration_errors_exit_2(pipeline, argv, capsys):
    d = pipeline
    argv = [str(a).format(d=d, g=d / "g.csv") for a in argv]
    assert cli.run(argv) == 2
    assert "configuration error" in capsys.readouterr().err


def test_unknown_config_key(pipeline):
    cfg = pipeline / "bad.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert call("noise", "--config", cfg)[0] == 2


def test_runtime_fault_is_exit_1(monkeypatch, tmp_path):
    def boom(args):
        raise RuntimeError("disk on fire")

    monkeypatch.setitem(cli.COMMANDS, "spectrum", boom)
    assert call("spectrum", "--out", tmp_path / "s")[0] == 1


def test_repeat_runs_are_bit_identical(pipeline, tmp_path):
    d = pipeline
    for k in (1, 2):
        call("noise", "--in", d / "g.csv", "--epsilon", 0.05, "--relative", "--seed", 5, "--out", tmp_path / f"n{k}.csv")
        call("fbp", "--in", tmp_path / f"n{k}.csv", "--allow-noisy", "--grid", 64, "--out", tmp_path / f"r{k}.csv")
    for stem in ("n", "r"):
        assert (tmp_path / f"{stem}1.csv").read_bytes() == (tmp_path / f"{stem}2.csv").read_bytes()
    assert (tmp_path / "r1.pgm").read_bytes() == (tmp_path / "r2.pgm").read_bytes()
