"""Fit quality and the derived report products (RMSE tables, OPD steps, parameter maps)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .estimator import PixelResult
    from .model import WavenumberGrid
    from .simulator import DeviceLayout

log = logging.getLogger(__name__)


def fit_rmse(y, fitted, y_mean: float | None = None) -> float:
    """RMSE of ``fitted - y`` relative to the mean of ``y``."""
    y = np.asarray(y, dtype=float)
    fitted = np.asarray(fitted, dtype=float)
    if y.shape != fitted.shape:
        raise ValueError("data and fitted curve differ in length")
    y_mean = float(y.mean()) if y_mean is None else float(y_mean)
    if y_mean == 0.0:
        raise ValueError("RMSE is undefined for a zero-mean signal")
    return float(np.sqrt(np.mean(((fitted - y) / y_mean) ** 2)))


@dataclass
class FitReport:
    interferometers: list[int]
    rmse: list[float]
    converged: list[bool]
    method: str
    regime: str

    @property
    def converged_rmse(self) -> np.ndarray:
        return np.array([r for r, ok in zip(self.rmse, self.converged) if ok], dtype=float)

    @property
    def mean(self) -> float:
        vals = self.converged_rmse
        return float(vals.mean()) if vals.size else float("nan")

    @property
    def std(self) -> float:
        vals = self.converged_rmse
        return float(vals.std()) if vals.size else float("nan")

    @property
    def n_not_converged(self) -> int:
        return sum(not ok for ok in self.converged)

    def summary(self) -> dict:
        return {"method": self.method, "regime": self.regime, "mean": self.mean, "std": self.std,
                "n_fits": len(self.rmse), "n_not_converged": self.n_not_converged}

    def summary_line(self) -> str:
        return (f"{self.method} [{self.regime}] RMSE {self.mean:.4f} ± {self.std:.4f} "
                f"({len(self.rmse) - self.n_not_converged}/{len(self.rmse)} converged)")


def fit_report(results: Sequence[PixelResult], method: str, regime: str) -> FitReport:
    """RMSE per pixel; aggregates use converged fits only."""
    ks, rmse, ok = [], [], []
    for p in results:
        ks.append(p.interferometer)
        rmse.append(p.result.rmse if p.result is not None else float("nan"))
        ok.append(p.converged)
    return FitReport(ks, rmse, ok, method, regime)


@dataclass
class OpdStepReport:
    opd: np.ndarray           # per interferometer, NaN where missing
    steps: np.ndarray         # opd[k+1] - opd[k]
    deviation: np.ndarray     # steps - nominal step
    nominal_step: float
    positions: list[tuple[int, int]]     # (row, col) of each interferometer
    missing: list[int] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [{"step": k, "from": k, "to": k + 1,
                 "row": self.positions[k + 1][0], "col": self.positions[k + 1][1],
                 "opd_step_cm": self.steps[k], "deviation_cm": self.deviation[k]}
                for k in range(self.steps.size)]


def opd_step_report(opds: dict[int, float] | Sequence[PixelResult], layout: DeviceLayout) -> OpdStepReport:
    """Successive OPD increments against the nominal 2 n delta_d.

    Accepts either ``{interferometer: opd}`` or pixel results (one per
    interferometer, e.g. central pixels).
    """
    if not isinstance(opds, dict):
        opds = {p.interferometer: p.result.params.opd for p in opds if p.result is not None}
    n = layout.n_interferometers
    opd = np.full(n, np.nan)
    for k, value in opds.items():
        if not 0 <= k < n:
            raise ValueError(f"result for interferometer {k} does not exist in the layout")
        opd[k] = value
    missing = [k for k in range(n) if np.isnan(opd[k])]
    if missing:
        log.warning("no OPD estimate for interferometers %s", missing)
    steps = np.diff(opd)
    nominal = layout.nominal_opd_step
    return OpdStepReport(opd, steps, steps - nominal, nominal,
                         [layout.position(k) for k in range(n)], missing)


@dataclass
class ParameterMaps:
    relative_opd: np.ndarray       # (H, W), NaN where masked
    mean_reflectivity: np.ndarray  # (H, W), NaN where masked
    mask: np.ndarray               # True where no usable estimate
    skipped_subimages: list[int] = field(default_factory=list)

    def rows(self) -> list[dict]:
        rr, cc = np.nonzero(~self.mask)
        return [{"row": int(r), "col": int(c), "relative_opd": self.relative_opd[r, c],
                 "mean_reflectivity": self.mean_reflectivity[r, c]} for r, c in zip(rr, cc)]

    def summary(self) -> dict:
        valid = ~self.mask
        return {"n_pixels": int(valid.sum()), "n_masked": int(self.mask.sum()),
                "skipped_subimages": self.skipped_subimages,
                "relative_opd_min": float(np.nanmin(self.relative_opd)) if valid.any() else None,
                "relative_opd_max": float(np.nanmax(self.relative_opd)) if valid.any() else None}


def parameter_maps(results: Sequence[PixelResult], layout: DeviceLayout, grid: WavenumberGrid) -> ParameterMaps:
    """Per-pixel OPD relative to the subimage center and wavenumber-averaged reflectivity.

    Pixels without a converged fit are masked. A subimage whose center pixel
    is unusable is skipped entirely.
    """
    from .model import poly_eval

    shape = layout.focal_shape
    opd = np.full(shape, np.nan)
    refl = np.full(shape, np.nan)
    for p in results:
        if not p.converged:
            continue
        r, c = p.pixel
        opd[r, c] = p.result.params.opd
        refl[r, c] = float(np.mean(poly_eval(p.result.params.reflectivity, grid.sigma, grid)))
    relative = np.full(shape, np.nan)
    skipped = []
    for k in range(layout.n_interferometers):
        r0, r1, c0, c1 = layout.bounds(k)
        block = opd[r0:r1, c0:c1]
        if np.all(np.isnan(block)):
            continue
        center = opd[layout.center_pixel(k)]
        if np.isnan(center) or center == 0:
            log.warning("subimage %d has no usable center pixel; skipped", k)
            skipped.append(k)
            refl[r0:r1, c0:c1] = np.nan
            continue
        relative[r0:r1, c0:c1] = (block - center) / center
    mask = np.isnan(relative)
    refl[mask] = np.nan
    return ParameterMaps(relative, refl, mask, skipped)


def radial_profile(values: np.ndarray, axis: tuple[float, float], bin_width: float = 1.0):
    """Mean of ``values`` (ignoring NaN) in rings of ``bin_width`` px around ``axis``."""
    rr, cc = np.indices(values.shape)
    radius = np.hypot(rr - axis[0], cc - axis[1])
    bins = np.floor(radius / bin_width + 0.5).astype(int)
    valid = ~np.isnan(values)
    centers, means = [], []
    for b in np.unique(bins[valid]):
        sel = valid & (bins == b)
        centers.append(b * bin_width)
        means.append(float(values[sel].mean()))
    return np.array(centers), np.array(means)
