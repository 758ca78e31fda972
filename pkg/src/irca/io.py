"""On-disk formats: datacubes, ground truth, layouts and characterization results.

A datacube is a directory holding ``manifest.json`` and a raw little-endian
float64 payload ordered acquisition-major, then row-major.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .estimator import CharacterizationResult, DeviceResults, InitialEstimate, IrcaConfig, PixelResult
from .lm import LmReport
from .model import TransmittanceParams, WaveRegime, WavenumberGrid
from .simulator import Datacube, DeviceLayout

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
PAYLOAD = "frames.bin"
LAYOUT = "layout.json"
TRUTH = "truth.json"
RESULTS_CSV = "results.csv"
RESULTS_JSON = "results.json"


class FormatError(ValueError):
    """A file exists but its content does not follow the expected format."""


def _dump(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, allow_nan=True) + "\n")


def _load(path: Path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


# ---------------------------------------------------------------------------
# Datacubes
# ---------------------------------------------------------------------------
def manifest_for(grid: WavenumberGrid, shape: tuple[int, int], power) -> dict:
    return {"format_version": FORMAT_VERSION, "n_acq": grid.size, "height": int(shape[0]),
            "width": int(shape[1]), "wavenumbers_cm1": grid.sigma.tolist(),
            "incident_power": np.asarray(power, dtype=float).tolist(), "dtype": "f64le",
            "payload": PAYLOAD}


def open_payload(directory, grid: WavenumberGrid, shape: tuple[int, int], power) -> np.memmap:
    """Create the manifest and a writable payload map to render frames into."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _dump(directory / MANIFEST, manifest_for(grid, shape, power))
    return np.memmap(directory / PAYLOAD, dtype="<f8", mode="w+", shape=(grid.size, *shape))


def write_datacube(directory, cube: Datacube) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _dump(directory / MANIFEST, manifest_for(cube.grid, cube.shape, cube.incident_power))
    np.ascontiguousarray(cube.frames, dtype="<f8").tofile(directory / PAYLOAD)
    return directory


def read_manifest(directory) -> dict:
    manifest = _load(Path(directory) / MANIFEST)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported datacube format_version {version!r} (expected {FORMAT_VERSION})")
    required = {"n_acq", "height", "width", "wavenumbers_cm1", "incident_power", "dtype", "payload"}
    missing = required - set(manifest)
    if missing:
        raise FormatError(f"manifest lacks fields {sorted(missing)}")
    if manifest["dtype"] != "f64le":
        raise FormatError(f"unsupported payload dtype {manifest['dtype']!r}")
    if len(manifest["wavenumbers_cm1"]) != manifest["n_acq"] or len(manifest["incident_power"]) != manifest["n_acq"]:
        raise FormatError("wavenumber or power list length differs from n_acq")
    return manifest


def read_datacube(directory, mmap: bool = True) -> Datacube:
    directory = Path(directory)
    manifest = read_manifest(directory)
    shape = (manifest["n_acq"], manifest["height"], manifest["width"])
    payload = directory / manifest["payload"]
    expected = 8 * shape[0] * shape[1] * shape[2]
    size = payload.stat().st_size
    if size != expected:
        raise FormatError(f"payload has {size} bytes, manifest implies {expected}")
    if mmap:
        frames = np.memmap(payload, dtype="<f8", mode="r", shape=shape)
    else:
        frames = np.fromfile(payload, dtype="<f8").reshape(shape)
    return Datacube(WavenumberGrid(manifest["wavenumbers_cm1"]), frames, manifest["incident_power"])


# ---------------------------------------------------------------------------
# Layout and ground truth
# ---------------------------------------------------------------------------
def write_layout(path, layout: DeviceLayout) -> None:
    _dump(Path(path), {"format_version": FORMAT_VERSION, **layout.to_dict()})


def read_layout(path) -> DeviceLayout:
    data = _load(Path(path))
    if data.pop("format_version", FORMAT_VERSION) != FORMAT_VERSION:
        raise FormatError("unsupported layout format_version")
    return DeviceLayout.from_dict(data)


def write_truth(path, truth: list[TransmittanceParams], grid: WavenumberGrid, regime: WaveRegime) -> None:
    _dump(Path(path), {
        "format_version": FORMAT_VERSION,
        "regime": regime.label,
        "basis": grid.affine_map(),
        "parameter_order": "gain[0..Nd], reflectivity[0..Nd], opd_cm, phase_shift",
        "interferometers": [{"index": k, "vector": p.to_vector().tolist(), **p.to_dict()}
                            for k, p in enumerate(truth)],
    })


def read_truth(path) -> tuple[list[TransmittanceParams], WaveRegime]:
    data = _load(Path(path))
    if data.get("format_version") != FORMAT_VERSION:
        raise FormatError("unsupported truth format_version")
    truth = [TransmittanceParams.from_dict(entry) for entry in data["interferometers"]]
    return truth, WaveRegime.parse(data["regime"])


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------
def _columns(degree: int) -> list[str]:
    n = degree + 1
    return (["interferometer", "row", "col", "converged", "iterations", "termination", "rmse",
             "initial_rmse", "opd_cm", "phase_shift"]
            + [f"a{m}" for m in range(n)] + [f"r{m}" for m in range(n)]
            + ["init_opd_cm", "init_r0", "init_phase_shift", "init_amplitude"]
            + [f"init_a{m}" for m in range(n)] + ["flags", "error"])


def write_results(directory, results: DeviceResults, layout: DeviceLayout | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = results.config
    degree = cfg.degree
    with open(directory / RESULTS_CSV, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_columns(degree))
        for p in results:
            base = [p.interferometer, p.pixel[0], p.pixel[1]]
            res = p.result
            if res is None:
                writer.writerow(base + [False, 0, "error"] + [""] * (len(_columns(degree)) - 7) + [p.error])
                continue
            init = res.initial
            writer.writerow(
                base + [res.converged, res.report.iterations, res.report.reason, _num(res.rmse),
                        _num(res.initial_rmse), _num(res.params.opd), _num(res.params.phase_shift)]
                + [_num(x) for x in res.params.gain] + [_num(x) for x in res.params.reflectivity]
                + [_num(init.opd), _num(init.reflectivity), _num(init.phase_shift),
                   "" if init.amplitude is None else _num(init.amplitude)]
                + [_num(x) for x in init.gain] + [";".join(res.flags), ""])
    ok = [p.result.rmse for p in results if p.converged]
    _dump(directory / RESULTS_JSON, {
        "format_version": FORMAT_VERSION,
        "pixels": results.pixel_mode,
        "degree": degree,
        "regime": cfg.regime.label,
        "initializer": cfg.initializer,
        "fixed_gain": cfg.fixed_gain,
        "paper_reflectivity_inversion": cfg.paper_reflectivity,
        "basis": results.grid.affine_map(),
        "wavenumbers_cm1": results.grid.sigma.tolist(),
        "n_results": len(results),
        "n_converged": len(ok),
        "n_failed": sum(p.result is None for p in results),
        "rmse_mean": float(np.mean(ok)) if ok else None,
        "rmse_std": float(np.std(ok)) if ok else None,
        "layout": layout.to_dict() if layout is not None else None,
    })
    return directory


def _num(x) -> str:
    return repr(float(x))


def _f(text: str) -> float:
    return float(text) if text not in ("", None) else math.nan


def read_results(directory) -> tuple[DeviceResults, dict]:
    directory = Path(directory)
    meta = _load(directory / RESULTS_JSON)
    if meta.get("format_version") != FORMAT_VERSION:
        raise FormatError("unsupported results format_version")
    degree = int(meta["degree"])
    n = degree + 1
    grid = WavenumberGrid(meta["wavenumbers_cm1"])
    config = IrcaConfig(degree=degree, regime=WaveRegime.parse(meta["regime"]),
                        initializer=meta["initializer"], fixed_gain=meta.get("fixed_gain", False))
    pixels = []
    with open(directory / RESULTS_CSV, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = _columns(degree)
        if reader.fieldnames != expected:
            raise FormatError(f"{RESULTS_CSV} columns do not match degree {degree}")
        for row in reader:
            k, pix = int(row["interferometer"]), (int(row["row"]), int(row["col"]))
            if row["termination"] == "error":
                pixels.append(PixelResult(k, pix, None, row["error"]))
                continue
            params = TransmittanceParams([_f(row[f"a{m}"]) for m in range(n)],
                                         [_f(row[f"r{m}"]) for m in range(n)],
                                         _f(row["opd_cm"]), _f(row["phase_shift"]))
            init = InitialEstimate(np.array([_f(row[f"init_a{m}"]) for m in range(n)]),
                                   _f(row["init_opd_cm"]), _f(row["init_r0"]), _f(row["init_phase_shift"]),
                                   None if row["init_amplitude"] == "" else _f(row["init_amplitude"]))
            report = LmReport(params.to_vector(), math.nan, int(row["iterations"]),
                              row["converged"] == "True", row["termination"], math.nan)
            flags = [f for f in row["flags"].split(";") if f]
            pixels.append(PixelResult(k, pix, CharacterizationResult(
                params, _f(row["rmse"]), init, _f(row["initial_rmse"]), report, flags)))
    return DeviceResults(grid, config, meta["pixels"], pixels), meta
