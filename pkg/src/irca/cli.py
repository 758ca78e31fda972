"""Command-line entry point: ``irca simulate|characterize|regimes|report``.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 data mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig
from .estimator import characterize_device
from .metrics import fit_report, opd_step_report, parameter_maps
from .model import WaveRegime, regime_max_reflectivity
from .simulator import (DeviceLayout, LayoutError, NyquistWarning, incident_power_curve, make_truth,
                        nyquist_check, simulate_datacube)

log = logging.getLogger("irca")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_MISMATCH = 0, 2, 3, 4


class DataMismatch(Exception):
    pass


def _regime_arg(text: str) -> str:
    try:
        WaveRegime.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def _apply_irca_flags(cfg: RunConfig, args) -> None:
    mapping = {"regime": "regime", "initializer": "initializer", "degree": "degree", "kernel": "kernel",
               "percentile": "percentile", "pixels": "pixels", "jobs": "jobs"}
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg.irca[key] = value
    if getattr(args, "fixed_gain", False):
        cfg.irca["fixed_gain"] = True
    if getattr(args, "paper_reflectivity_inversion", False):
        cfg.irca["paper_reflectivity_inversion"] = True


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------
def cmd_simulate(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.out:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.regime:
        cfg.truth["regime"] = args.regime
    if not cfg.out:
        raise ConfigError("no output directory (set 'out' or pass --out)")

    layout = cfg.build_layout()
    grid = cfg.build_grid()
    noise = cfg.build_noise()
    regime = cfg.truth_regime()
    truth_spec = cfg.truth
    try:
        gain = truth_spec.get("gain", [1.0])
        refl = truth_spec.get("reflectivity", [0.13])
        phase = truth_spec.get("phase_shift", 0.0)
        if phase == "random":
            phase = np.random.default_rng(cfg.seed).uniform(-np.pi, np.pi, layout.n_interferometers)
        truth = make_truth(layout, gain, refl, phase, float(truth_spec.get("tilt_per_column_cm", 0.0)))
        for params in truth:
            params.check(grid)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"truth: {exc}") from None
    if cfg.power not in ("constant", "lamp"):
        raise ConfigError(f"power must be 'constant' or 'lamp', got {cfg.power!r}")

    check = nyquist_check(layout, grid)
    if not check["pass"]:
        print(f"warning: Nyquist condition violated (margin {check['margin']:.3f})", file=sys.stderr)

    out = Path(cfg.out)
    power = incident_power_curve(grid, cfg.power)
    frames = io.open_payload(out, grid, layout.focal_shape, power)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NyquistWarning)
        simulate_datacube(layout, grid, truth, regime, noise, cfg.seed, power, out=frames)
    frames.flush()
    del frames
    io.write_truth(out / io.TRUTH, truth, grid, regime)
    io.write_layout(out / io.LAYOUT, layout)
    print(f"wrote {grid.size} frames of {layout.focal_shape[0]}x{layout.focal_shape[1]} to {out} "
          f"(Nyquist margin {check['margin']:.3f})")
    return EXIT_OK


def cmd_characterize(args) -> int:
    cfg = RunConfig.load(args.config)
    _apply_irca_flags(cfg, args)
    cfg.validate_extraction()
    irca_cfg = cfg.build_irca()
    cube_dir = Path(args.datacube)
    if cfg.layout is not None:
        layout = cfg.build_layout()
    elif (cube_dir / io.LAYOUT).exists():
        layout = io.read_layout(cube_dir / io.LAYOUT)
    else:
        raise ConfigError(f"no layout: add a 'layout' section or provide {cube_dir / io.LAYOUT}")
    cube = io.read_datacube(cube_dir)
    if cube.shape != layout.focal_shape:
        raise DataMismatch(f"datacube frames are {cube.shape[0]}x{cube.shape[1]}, "
                           f"layout expects {layout.focal_shape[0]}x{layout.focal_shape[1]}")
    out = Path(args.out or cfg.out or cube_dir / "characterization")
    results = characterize_device(
        cube, layout, irca_cfg, pixels=cfg.irca.get("pixels", "central"),
        kernel=cfg.irca.get("kernel", 11), percentile=float(cfg.irca.get("percentile", 90)),
        flat_field=cfg.irca.get("flat_field", "global"), jobs=cfg.irca.get("jobs"))
    io.write_results(out, results, layout)
    report = fit_report(results.pixels, irca_cfg.initializer, irca_cfg.regime.label)
    print(f"characterized {len(results)} pixels -> {out / io.RESULTS_CSV}")
    print(report.summary_line())
    return EXIT_OK


def cmd_regimes(args) -> int:
    cfg = RunConfig.load(args.config)
    waves = args.waves or cfg.regimes.get("waves") or [2, 3, 5, 10]
    threshold = args.threshold if args.threshold is not None else cfg.regimes.get("threshold", 0.01)
    try:
        threshold = float(threshold)
        waves = sorted({int(w) for w in waves})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if not threshold > 0:
        raise ConfigError(f"threshold must be positive, got {threshold}")
    if any(w < 1 for w in waves):
        raise ConfigError("wave counts must be >= 1")
    rows = [{"waves": w, "max_reflectivity": regime_max_reflectivity(WaveRegime.finite(w), threshold)}
            for w in waves]
    out = args.out or cfg.out
    if out:
        path = Path(out)
        if path.suffix.lower() != ".csv":
            path.mkdir(parents=True, exist_ok=True)
            path = path / "regimes.csv"
        _write_csv(path, rows, ["waves", "max_reflectivity"])
        print(f"wrote {path}")
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=["waves", "max_reflectivity"])
        writer.writeheader()
        writer.writerows(rows)
    return EXIT_OK


def _check_layout(results, layout: DeviceLayout) -> None:
    for p in results:
        if not 0 <= p.interferometer < layout.n_interferometers:
            raise DataMismatch(f"result for interferometer {p.interferometer} is outside the layout")
        if layout.interferometer_at(p.pixel) != p.interferometer:
            raise DataMismatch(f"pixel {p.pixel} does not belong to interferometer {p.interferometer}")


def cmd_report(args) -> int:
    results, meta = io.read_results(args.results)
    if args.layout:
        layout = io.read_layout(args.layout)
    elif meta.get("layout"):
        try:
            layout = DeviceLayout.from_dict(meta["layout"])
        except (LayoutError, TypeError) as exc:
            raise ConfigError(f"layout stored with the results is invalid: {exc}") from None
    else:
        raise ConfigError("no layout: pass --layout")
    _check_layout(results, layout)
    out = Path(args.out or args.results)
    out.mkdir(parents=True, exist_ok=True)

    if args.kind == "rmse":
        report = fit_report(results.pixels, meta.get("initializer", "ml"), meta.get("regime", "?"))
        rows = [{"interferometer": k, "row": p.pixel[0], "col": p.pixel[1], "rmse": r, "converged": ok}
                for p, k, r, ok in zip(results, report.interferometers, report.rmse, report.converged)]
        _write_csv(out / "rmse.csv", rows, ["interferometer", "row", "col", "rmse", "converged"])
        (out / "rmse_summary.json").write_text(json.dumps(report.summary(), indent=2) + "\n")
        print(report.summary_line())
    elif args.kind == "opd-steps":
        per_k = {}
        for p in results.central(layout) if results.pixel_mode == "all" else results:
            if p.result is not None:
                per_k.setdefault(p.interferometer, p.result.params.opd)
        steps = opd_step_report(per_k, layout)
        _write_csv(out / "opd_steps.csv", steps.rows(),
                   ["step", "from", "to", "row", "col", "opd_step_cm", "deviation_cm"])
        summary = {"nominal_step_cm": steps.nominal_step, "n_steps": int(steps.steps.size),
                   "missing": steps.missing,
                   "mean_deviation_cm": float(np.nanmean(steps.deviation)) if steps.steps.size else None}
        (out / "opd_steps_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        print(f"wrote {steps.steps.size} OPD steps to {out / 'opd_steps.csv'}")
    else:
        if results.pixel_mode != "all":
            raise DataMismatch("maps need full-plane results (characterize with --pixels all)")
        maps = parameter_maps(results.pixels, layout, results.grid)
        _write_csv(out / "maps.csv", maps.rows(), ["row", "col", "relative_opd", "mean_reflectivity"])
        (out / "maps_summary.json").write_text(json.dumps(maps.summary(), indent=2) + "\n")
        print(f"wrote {int((~maps.mask).sum())} map pixels ({int(maps.mask.sum())} masked) to {out / 'maps.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irca", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic characterization datacube")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--regime", type=_regime_arg, help="two | finite:W | infinite (ground truth)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("characterize", help="run the characterization pipeline on a datacube")
    p.add_argument("datacube")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--regime", type=_regime_arg, help="two | finite:W | infinite")
    p.add_argument("--initializer", choices=["ml", "es"])
    p.add_argument("--degree", type=int)
    p.add_argument("--kernel", type=int)
    p.add_argument("--percentile", type=float)
    p.add_argument("--pixels", choices=["central", "all"])
    p.add_argument("--jobs", type=int)
    p.add_argument("--fixed-gain", action="store_true")
    p.add_argument("--paper-reflectivity-inversion", action="store_true")
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("regimes", help="maximum reflectivity per wave count for an RMSE threshold")
    p.add_argument("--waves", type=int, nargs="+")
    p.add_argument("--threshold", type=float)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_regimes)

    p = sub.add_parser("report", help="derive report tables from characterization results")
    p.add_argument("results")
    p.add_argument("--kind", choices=["rmse", "opd-steps", "maps"], required=True)
    p.add_argument("--layout")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataMismatch as exc:
        print(f"data mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (OSError, io.FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
