"""Command-line front end.

Every command reads its inputs, writes its outputs atomically and prints a
one-line JSON summary.  Exit codes: 0 success, 2 bad configuration or
unreadable input, 3 a numerical check outside its tolerance, 1 anything
else.  Options may also come from ``--config file.json`` (keys are option
names with dashes or underscores); options given on the command line win.
The seed defaults to ``$RADONMS_SEED`` and then to 0.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from scipy import fft

from . import io
from .grid import (
    ImageND,
    centered_grid,
    gaussian,
    rasterize_phantom,
    relative_l2_error,
    shepp_logan,
    two_disks,
)
from .inversion import (
    FilterFamily,
    SpectralFilterConfig,
    analyze_spectrum,
    convergence_sweep,
    fbp_reconstruct,
)
from .noise import NoiseConfig, add_noise
from .norms import sinogram_norm
from .radon import build_dense_operator, check_range_moments, forward_project, geometry_for_grid

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2, 3


class ConfigError(Exception):
    """Invalid options or unreadable input (exit 2)."""


class VerificationFailure(Exception):
    """A numerical check missed its tolerance (exit 3)."""

    def __init__(self, message: str, summary: dict):
        super().__init__(message)
        self.summary = summary


NAMED_PHANTOMS = {
    "two_disks": lambda: two_disks(),
    "shepp_logan": lambda: shepp_logan(),
    "shepp_logan_modified": lambda: shepp_logan(variant="modified"),
}


# ---------------------------------------------------------------------------
# helpers


def _seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    env = os.environ.get("RADONMS_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"RADONMS_SEED={env!r} is not an integer") from None


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("RADONMS_THREADS", "1")
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"RADONMS_THREADS={env!r} is not an integer") from None
    if n < 1:
        raise ConfigError("thread count must be at least 1")
    return n


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        flags = ", ".join("--in" if m == "input" else "--" + m.replace("_", "-") for m in missing)
        raise ConfigError(f"{args.command}: missing required option(s) {flags}")


def _read_image(path):
    try:
        return io.read_image_csv(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read image {path}: {exc}") from None


def _read_sinogram(path):
    try:
        return io.read_sinogram_csv(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read sinogram {path}: {exc}") from None


def _with_pgm(path: Path, values, outputs: list):
    outputs.append(str(io.write_pgm(Path(path).with_suffix(".pgm"), values)))


def _filter_cfg(args) -> SpectralFilterConfig:
    try:
        return SpectralFilterConfig(
            band_fraction=args.band_fraction,
            window=args.window,
            pad_fraction=args.pad_fraction,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands


def cmd_phantom(args) -> dict:
    _need(args, "spec", "out")
    if args.spec in NAMED_PHANTOMS:
        spec = NAMED_PHANTOMS[args.spec]()
    elif args.spec == "gaussian":
        spec = None
    else:
        try:
            spec = io.read_phantom_json(args.spec)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot read phantom spec {args.spec}: {exc}") from None
    try:
        grid = centered_grid(args.grid, args.extent, args.ndim)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if spec is None:
        f = gaussian(grid, width=args.width)
    else:
        try:
            f = rasterize_phantom(spec, grid)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    out = io.write_image_csv(args.out, f)
    outputs = [str(out)]
    _with_pgm(out, f.values, outputs)
    return {"dims": list(grid.dims), "total_mass": f.total_mass(), "outputs": outputs}


def cmd_project(args) -> dict:
    _need(args, "input", "out")
    f = _read_image(args.input)
    n_dir = args.directions if f.grid.ndim == 3 else args.angles
    geom = geometry_for_grid(f.grid, n_dir, args.offsets, args.xmax)
    g = forward_project(f, geom)
    out = io.write_sinogram_csv(args.out, g)
    outputs = [str(out)]
    _with_pgm(out, g.values, outputs)
    return {"shape": list(geom.shape), "sinogram_norm": sinogram_norm(g), "outputs": outputs}


def cmd_noise(args) -> dict:
    _need(args, "input", "out", "epsilon")
    g = _read_sinogram(args.input)
    eps = args.epsilon * sinogram_norm(g) if args.relative else args.epsilon
    try:
        cfg = NoiseConfig(eps, _seed(args))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ge = add_noise(g, cfg)
    out = io.write_sinogram_csv(args.out, ge)
    return {"epsilon": eps, "seed": cfg.seed, "distance": sinogram_norm(ge - g), "outputs": [str(out)]}


def _target_grid(args, g):
    if args.like is not None:
        return _read_image(args.like).grid
    if args.compare is not None:
        return _read_image(args.compare).grid
    ndim = g.geometry.ndim
    half = g.geometry.x_max / np.sqrt(ndim)
    n = args.grid if args.grid is not None else int(round(2 * half / g.geometry.offset_spacing))
    return centered_grid(n, half, ndim)


def cmd_fbp(args) -> dict:
    _need(args, "input", "out")
    g = _read_sinogram(args.input)
    grid = _target_grid(args, g)
    try:
        rec = fbp_reconstruct(
            g,
            grid,
            _filter_cfg(args),
            path=args.path,
            truncation_tol=None if args.allow_noisy else 1e-6,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = io.write_image_csv(args.out, rec)
    outputs = [str(out)]
    _with_pgm(out, rec.values, outputs)
    summary = {"dims": list(grid.dims), "outputs": outputs}
    if args.compare is not None:
        ref = _read_image(args.compare)
        summary["relative_l2_error"] = relative_l2_error(rec, ref)
    return summary


def cmd_mspc(args) -> dict:
    from .mspc import (
        MSConfig,
        MSProblem,
        evaluate_energy,
        label_agreement,
        partition_from_image,
        reconstruct_pc,
    )

    _need(args, "input", "out")
    g = _read_sinogram(args.input)
    grid = _target_grid(args, g)
    try:
        cfg = MSConfig(
            beta=args.beta,
            m=args.regions,
            delta=args.delta,
            max_outer_iters=args.max_iters,
            seed=_seed(args),
            ridge=args.ridge,
        )
        fb = fbp_reconstruct(g, grid, truncation_tol=None)
        init = partition_from_image(fb, cfg.m, cfg.delta_for(grid), args.init)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    prob = MSProblem(g, grid)
    res = reconstruct_pc(g, cfg, init, prob)
    out = Path(args.out)
    outputs = [str(io.write_image_csv(out, res.pc.image()))]
    _with_pgm(out, res.pc.image().values, outputs)
    labels = res.pc.partition.labels
    lab_path = out.with_name(out.stem + "_labels.csv")
    outputs.append(str(io.write_image_csv(lab_path, ImageND(grid, labels), integer=True)))
    trace_path = out.with_name(out.stem + "_trace.csv")
    outputs.append(str(io.write_energy_trace(trace_path, res.trace)))
    final = res.trace[-1]
    summary = {
        "values": res.pc.values.tolist(),
        "energy": {"fidelity": final.fidelity, "perimeter": final.perimeter, "total": final.total},
        "iterations": len(res.trace),
        "converged": res.converged,
        "outputs": outputs,
    }
    if args.compare is not None:
        ref = _read_image(args.compare)
        summary["relative_l2_error"] = relative_l2_error(res.pc.image(), ref)
        try:
            ref_part = partition_from_image(ref, cfg.m, cfg.delta_for(grid), "kmeans")
        except ValueError as exc:
            raise ConfigError(f"cannot split {args.compare} into {cfg.m} regions: {exc}") from None
        summary["label_agreement"] = label_agreement(res.pc.partition, ref_part)
        summary["energy_at_reference"] = evaluate_energy(
            _pc_from_reference(ref_part, g, prob), g, cfg.beta, prob
        ).total
    return summary


def _pc_from_reference(part, g, prob):
    from .mspc import PCFunction, fit_values

    return PCFunction(part, fit_values(part, g, None, prob))


def cmd_verify_electro(args) -> dict:
    from .electrostatics import (
        fidelity_equivalence,
        verify_divergence_identity,
        verify_norm_identity,
    )

    levels = [(n, d) for n, d in zip(args.levels_grid, args.levels_directions)]
    if not levels:
        raise ConfigError("verify-electro needs at least one refinement level")
    reports = {"norm-identity": [], "fidelity-equivalence": [], "divergence-identity": []}
    for n in args.div_levels:
        grid = centered_grid(n, args.extent, 3)
        reports["divergence-identity"].append(
            verify_divergence_identity(gaussian(grid, width=args.width)).residual
        )
    for n, ndir in levels:
        grid = centered_grid(n, args.extent, 3)
        f = gaussian(grid, width=args.width)
        f0 = gaussian(grid, center=(0.3, -0.2, 0.1), width=0.8 * args.width, amplitude=1.5)
        geom = geometry_for_grid(grid, ndir)
        reports["norm-identity"].append(verify_norm_identity(f, geom).residual)
        reports["fidelity-equivalence"].append(
            fidelity_equivalence(f, forward_project(f0, geom)).relative_gap
        )
    tol = {"norm-identity": 0.10, "fidelity-equivalence": 0.10, "divergence-identity": 0.05}
    failures = [
        f"{k}: residual {v[-1]:.3g} > {tol[k]}" for k, v in reports.items() if v[-1] > tol[k]
    ]
    failures += [
        f"{k}: residuals do not decrease under refinement {v}"
        for k, v in reports.items()
        if any(b >= a for a, b in zip(v, v[1:]))
    ]
    summary = {"levels": levels, "divergence_levels": args.div_levels, "residuals": reports}
    if args.out is not None:
        summary["outputs"] = [str(io.write_json(args.out, summary))]
    if failures:
        raise VerificationFailure("; ".join(failures), summary)
    return summary


def cmd_verify_range(args) -> dict:
    _need(args, "input")
    g = _read_sinogram(args.input)
    try:
        rep = check_range_moments(g, args.kmax)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    summary = {
        "kmax": args.kmax,
        "residuals": dict(zip(map(str, rep.degrees), rep.residuals)),
        "underdetermined": rep.underdetermined,
        "tolerance": args.tol,
    }
    if args.out is not None:
        summary["outputs"] = [str(io.write_json(args.out, summary))]
    bad = [k for k, r in zip(rep.degrees, rep.residuals) if np.isfinite(r) and r > args.tol]
    if bad:
        raise VerificationFailure(
            f"moment residuals above {args.tol} for degrees {bad}", summary
        )
    return summary


def _dense_problem(args):
    grid = centered_grid(args.grid, args.extent, 2)
    geom = geometry_for_grid(grid, args.angles)
    return grid, build_dense_operator(geom, grid)


def cmd_spectrum(args) -> dict:
    _need(args, "out")
    grid, op = _dense_problem(args)
    gammas = np.logspace(-6, 0, 13)
    rep = analyze_spectrum(op, gammas)
    prefix = Path(args.out)
    s = rep.singular_values
    outputs = [
        str(io.write_table_csv(prefix.with_name(prefix.name + "_sigma.csv"), ["k", "sigma"], [(k + 1, v) for k, v in enumerate(s)])),
        str(
            io.write_table_csv(
                prefix.with_name(prefix.name + "_norms.csv"),
                ["gamma", *rep.norms.keys()],
                [(gm, *(rep.norms[m][i] for m in rep.norms)) for i, gm in enumerate(gammas)],
            )
        ),
    ]
    return {
        "sigma_1": float(s[0]),
        "sigma_min": float(s[-1]),
        "decay_index": rep.decay_index(0.1) + 1,
        "numerical_rank": rep.numerical_rank(),
        "outputs": outputs,
    }


SCHEDULES = {"eps": lambda e: e, "eps2": lambda e: e**2, "eps3": lambda e: e**3}


def cmd_sweep(args) -> dict:
    _need(args, "out")
    if args.schedule not in SCHEDULES:
        raise ConfigError(f"schedule must be one of {sorted(SCHEDULES)}")
    try:
        FilterFamily(args.method, 1.0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    grid, op = _dense_problem(args)
    f = gaussian(grid, width=args.width)
    res = convergence_sweep(op, f, args.eps, SCHEDULES[args.schedule], args.method, _seed(args))
    rows = [(r.epsilon, r.gamma, r.error, r.noise_term, r.bias_term) for r in res.rows]
    out = io.write_table_csv(args.out, ["epsilon", "gamma", "error", "noise_term", "bias_term"], rows)
    summary = {
        "schedule": args.schedule,
        "errors": res.errors().tolist(),
        "premise_ok": res.premise_ok,
        "converging": res.converging(),
        "outputs": [str(out)],
    }
    if res.premise_ok and not res.converging():
        raise VerificationFailure("errors do not decrease along a premise-satisfying sweep", summary)
    return summary


COMMANDS = {
    "phantom": cmd_phantom,
    "project": cmd_project,
    "noise": cmd_noise,
    "fbp": cmd_fbp,
    "mspc": cmd_mspc,
    "verify-electro": cmd_verify_electro,
    "verify-range": cmd_verify_range,
    "spectrum": cmd_spectrum,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option defaults")
    common.add_argument("--seed", type=int, help="RNG seed (default: $RADONMS_SEED or 0)")
    common.add_argument("--threads", type=int, help="FFT worker threads (default: $RADONMS_THREADS)")

    parser = _Parser(prog="radonms", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", parents=[common], help="rasterise a phantom")
    p.add_argument("--spec", help="JSON component list, or one of: " + ", ".join([*NAMED_PHANTOMS, "gaussian"]))
    p.add_argument("--grid", type=int, default=128, help="cells per axis")
    p.add_argument("--extent", type=float, default=1.0, help="half width of the square/cube")
    p.add_argument("--ndim", type=int, default=2)
    p.add_argument("--width", type=float, default=0.3, help="width of the 'gaussian' phantom")
    p.add_argument("--out")

    p = sub.add_parser("project", parents=[common], help="forward projection")
    p.add_argument("--in", dest="input")
    p.add_argument("--angles", type=int, default=180, help="2D: angles in [0, pi)")
    p.add_argument("--directions", type=int, default=256, help="3D: hemisphere directions")
    p.add_argument("--offsets", type=int)
    p.add_argument("--xmax", type=float)
    p.add_argument("--out")

    p = sub.add_parser("noise", parents=[common], help="add calibrated Gaussian noise")
    p.add_argument("--in", dest="input")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--relative", action="store_true", help="epsilon is a fraction of ||g||")
    p.add_argument("--out")

    for name, helptext in (("fbp", "filtered back-projection"), ("mspc", "piecewise-constant reconstruction")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--in", dest="input")
        p.add_argument("--out")
        p.add_argument("--like", help="take the output grid from this image CSV")
        p.add_argument("--grid", type=int, help="cells per axis of the default grid")
        p.add_argument("--compare", help="reference image CSV for error metrics")
        if name == "fbp":
            p.add_argument("--band-fraction", type=float, default=0.9)
            p.add_argument("--window", default="cosine", choices=["cosine", "none"])
            p.add_argument("--pad-fraction", type=float, default=0.25)
            p.add_argument("--path", default="filter-first", choices=["filter-first", "backproject-first"])
            p.add_argument("--allow-noisy", action="store_true", help="skip the edge-truncation test")
        else:
            p.add_argument("--beta", type=float, default=1e-3)
            p.add_argument("--regions", type=int, default=2)
            p.add_argument("--delta", type=float)
            p.add_argument("--max-iters", type=int, default=50)
            p.add_argument("--ridge", type=float)
            p.add_argument("--init", default="kmeans", choices=["kmeans", "quantile"])

    p = sub.add_parser("verify-electro", parents=[common], help="3D electrostatic identities")
    p.add_argument("--levels-grid", type=int, nargs="+", default=[16, 24, 32])
    p.add_argument("--levels-directions", type=int, nargs="+", default=[64, 128, 256])
    p.add_argument("--div-levels", type=int, nargs="+", default=[24, 36, 48], help="grids for the divergence identity")
    p.add_argument("--extent", type=float, default=2.0)
    p.add_argument("--width", type=float, default=0.5)
    p.add_argument("--out")

    p = sub.add_parser("verify-range", parents=[common], help="moment conditions of the range")
    p.add_argument("--in", dest="input")
    p.add_argument("--kmax", type=int, default=2)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--out")

    for name, helptext in (("spectrum", "singular values of a small dense problem"), ("sweep", "noise/regularisation sweep")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--grid", type=int, default=16)
        p.add_argument("--extent", type=float, default=1.0)
        p.add_argument("--angles", type=int, default=24 if name == "spectrum" else 16)
        p.add_argument("--out", help="output path (spectrum: file prefix)")
        if name == "sweep":
            p.add_argument("--schedule", default="eps")
            p.add_argument("--method", default="tikhonov")
            p.add_argument("--eps", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.025])
            p.add_argument("--width", type=float, default=0.4)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Parse twice: config-file values become defaults, explicit flags override them."""
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        cfg = io.read_json(args.config)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    defaults = {}
    for key, val in cfg.items():
        dest = key.replace("-", "_")
        if dest == "in":
            dest = "input"
        if dest not in known:
            raise ConfigError(f"unknown config key {key!r} for {args.command}")
        defaults[dest] = val
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        with fft.set_workers(_threads(args)):
            summary = COMMANDS[args.command](args)
        print(json.dumps({"command": args.command, "status": "ok", **summary}, default=io._json_default), file=stdout)
        return EXIT_OK
    except ConfigError as exc:
        print(f"radonms: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VerificationFailure as exc:
        print(json.dumps({"command": args.command, "status": "verification-failed", **exc.summary}, default=io._json_default), file=stdout)
        print(f"radonms: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except Exception as exc:  # noqa: BLE001 - runtime faults map to exit 1
        print(f"radonms: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
