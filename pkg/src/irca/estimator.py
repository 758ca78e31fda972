"""Interferometer response characterization: gain fit, initialization and refinement.

Per pixel the pipeline is

1. fit the gain polynomial to the flat-field statistic ``w``;
2. initialize OPD, reflectivity and phase shift from the neighborhood mean
   ``u``, either by the sinusoid maximum-likelihood estimator (periodogram)
   or by an exhaustive grid search;
3. refine every parameter against the raw series ``y`` with Levenberg-Marquardt.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .lm import LmConfig, LmProblem, LmReport, lm_solve
from .metrics import fit_rmse
from .model import (R_CLAMP_MAX, TransmittanceParams, WaveRegime, WavenumberGrid,
                    mean_scaled_transmittance, mean_scaled_transmittance_derivatives,
                    poly_eval, transmittance_response, wrap_phase)
from .simulator import Datacube, DeviceLayout
from .statistics import (PixelStatistics, equalize_power, flat_field_statistic, pixel_statistics,
                         subimage_flat_field)

log = logging.getLogger(__name__)

#: ML amplitudes are capped here before inversion so the initial reflectivity stays usable.
ALPHA_CAP = 0.99
#: Guard, in base periodogram bins, kept from each end of the unrestricted OPD interval.
EDGE_GUARD_BINS = 5


@dataclass(frozen=True)
class IrcaConfig:
    degree: int = 5
    regime: WaveRegime = field(default_factory=WaveRegime.infinite)
    opd_interval: tuple[float, float] | None = None
    opd_tolerance: float = 0.1          # relative half-width around a nominal OPD
    oversampling: int = 8
    initializer: str = "ml"
    gain_lm: LmConfig = field(default_factory=LmConfig)
    refine_lm: LmConfig = field(default_factory=LmConfig)
    fixed_gain: bool = False
    paper_reflectivity: bool = False
    es_oversampling: int = 2
    es_reflectivities: tuple[float, ...] = tuple(np.round(np.linspace(0.0, 0.9, 19), 6))
    es_phases: int = 36

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("polynomial degree must be >= 0")
        if self.oversampling < 1 or self.es_oversampling < 1:
            raise ValueError("oversampling must be >= 1")
        if self.initializer not in ("ml", "es"):
            raise ValueError(f"initializer must be 'ml' or 'es', got {self.initializer!r}")
        if self.opd_interval is not None:
            lo, hi = self.opd_interval
            if not 0 <= lo < hi:
                raise ValueError("OPD interval must satisfy 0 <= lo < hi")
        if not self.opd_tolerance > 0:
            raise ValueError("opd_tolerance must be positive")


class PeriodogramPeak(NamedTuple):
    opd: float
    power: float
    degenerate: bool


class PhaseEstimate(NamedTuple):
    phase: float
    degenerate: bool


@dataclass
class InitialEstimate:
    gain: np.ndarray
    opd: float
    reflectivity: float
    phase_shift: float
    amplitude: float | None = None


@dataclass
class CharacterizationResult:
    params: TransmittanceParams
    rmse: float
    initial: InitialEstimate
    initial_rmse: float
    report: LmReport
    flags: list[str] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.report.converged


# ---------------------------------------------------------------------------
# Step 1: gain
# ---------------------------------------------------------------------------
def _vandermonde(grid: WavenumberGrid, degree: int) -> np.ndarray:
    return np.vander(grid.normalized, degree + 1, increasing=True)


def estimate_gain(w, grid: WavenumberGrid, degree: int, lm_config: LmConfig | None = None) -> np.ndarray:
    """Fit the gain polynomial to the flat-field statistic, starting from [mean(w), 0, ...]."""
    w = np.asarray(w, dtype=float)
    if w.size != grid.size:
        raise ValueError("flat-field statistic length differs from the grid")
    if w.size < degree + 1:
        raise ValueError(f"{w.size} acquisitions cannot determine a degree-{degree} polynomial")
    vander = _vandermonde(grid, degree)
    problem = LmProblem(lambda a: vander @ a - w, degree + 1, lambda a: vander)
    start = np.zeros(degree + 1)
    start[0] = w.mean()
    report = lm_solve(problem, start, lm_config)
    if not report.converged:
        log.warning("gain fit stopped without converging (%s)", report.reason)
    return report.params


def fringe_contrast_series(u, gain, grid: WavenumberGrid) -> np.ndarray:
    """(u - A) / A with A the fitted gain on the grid."""
    a = poly_eval(gain, grid.sigma, grid)
    if np.any(a <= 0):
        raise ValueError("fitted gain is not positive on the grid")
    return (np.asarray(u, dtype=float) - a) / a


# ---------------------------------------------------------------------------
# Step 2: initialization
# ---------------------------------------------------------------------------
def default_opd_interval(grid: WavenumberGrid, nominal: float | None = None,
                         tolerance: float = 0.1) -> tuple[float, float]:
    """Nominal +/- tolerance (at least one base bin wide), else the guarded full range."""
    top = grid.max_opd
    if nominal is not None:
        half = max(tolerance * nominal, grid.opd_resolution)
        return max(nominal - half, 0.0), min(nominal + half, top)
    guard = EDGE_GUARD_BINS * grid.opd_resolution
    return guard, top - guard


def opd_search_grid(grid: WavenumberGrid, interval: tuple[float, float], oversampling: int) -> np.ndarray:
    lo, hi = interval
    if not hi > lo or lo < 0:
        raise ValueError(f"empty OPD interval {interval}")
    step = grid.opd_resolution / oversampling
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def _dft(v: np.ndarray, sigma: np.ndarray, opd: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Generalized DFT sum_i v_i exp(-j 2 pi opd sigma_i) for each opd."""
    out = np.empty(opd.size, dtype=complex)
    for start in range(0, opd.size, chunk):
        block = opd[start:start + chunk]
        out[start:start + chunk] = np.exp(-2j * np.pi * np.outer(block, sigma)) @ v
    return out


def periodogram(v, grid: WavenumberGrid, opd) -> np.ndarray:
    return np.abs(_dft(np.asarray(v, dtype=float), grid.sigma, np.atleast_1d(np.asarray(opd, float))))


def periodogram_opd(v, grid: WavenumberGrid, interval: tuple[float, float] | None = None,
                    oversampling: int = 8) -> PeriodogramPeak:
    """Arg-max of the periodogram over a sampled OPD interval.

    Ties go to the smallest OPD and mark the estimate degenerate.
    """
    interval = interval or default_opd_interval(grid)
    candidates = opd_search_grid(grid, interval, oversampling)
    power = periodogram(v, grid, candidates)
    best = int(np.argmax(power))
    peak = power[best]
    degenerate = bool(peak == 0.0 or np.count_nonzero(power == peak) > 1)
    return PeriodogramPeak(float(candidates[best]), float(peak), degenerate)


def ml_amplitude(v, grid: WavenumberGrid, opd: float) -> float:
    v = np.asarray(v, dtype=float)
    return float(2.0 / v.size * abs(_dft(v, grid.sigma, np.array([opd]))[0]))


def ml_reflectivity(alpha: float, paper: bool = False, tolerance: float = 1e-9) -> float:
    """Reflectivity from a fringe amplitude alpha = 2r / (1 + r^2).

    The default is the exact inverse. ``paper=True`` returns 1 - sqrt(1 - alpha^2)
    instead, kept for comparison with published results.
    """
    if alpha < 0 or alpha > 1 + tolerance or math.isnan(alpha):
        raise ValueError(f"fringe amplitude {alpha} is inconsistent with a physical reflectivity")
    alpha = min(alpha, 1.0)
    root = math.sqrt(1.0 - alpha * alpha)
    if paper:
        return 1.0 - root
    if alpha == 0.0:
        return 0.0
    # alpha / (1 + root) == (1 - root) / alpha, without the cancellation at small alpha
    return alpha / (1.0 + root)


def ml_phase(v, grid: WavenumberGrid, opd: float) -> PhaseEstimate:
    v = np.asarray(v, dtype=float)
    arg = 2.0 * np.pi * opd * grid.sigma
    s, c = float(v @ np.sin(arg)), float(v @ np.cos(arg))
    if s == 0.0 and c == 0.0:
        return PhaseEstimate(0.0, True)
    return PhaseEstimate(wrap_phase(math.atan2(s, c)), False)


def es_initialize(v, grid: WavenumberGrid, opd_grid, reflectivity_grid, phase_grid,
                  regime: WaveRegime | None = None) -> tuple[float, float, float]:
    """Exhaustive search of (opd, r, phase) minimizing sum (Tbar - 1 - v)^2.

    Ties resolve to the smallest opd, then r, then phase.
    """
    regime = regime or WaveRegime.infinite()
    v = np.asarray(v, dtype=float)
    opds = np.sort(np.atleast_1d(np.asarray(opd_grid, dtype=float)))
    refls = np.sort(np.atleast_1d(np.asarray(reflectivity_grid, dtype=float)))
    phases = np.sort(np.atleast_1d(np.asarray(phase_grid, dtype=float)))
    if not (opds.size and refls.size and phases.size):
        raise ValueError("search grids must be non-empty")
    target = 1.0 + v
    best_cost, best = np.inf, (opds[0], refls[0], phases[0])
    for opd in opds:
        phi = 2.0 * np.pi * opd * grid.sigma[None, :] - phases[:, None]
        model = mean_scaled_transmittance(refls[:, None, None], phi[None], regime)
        cost = np.sum((model - target) ** 2, axis=-1)
        idx = np.unravel_index(int(np.argmin(cost)), cost.shape)
        if cost[idx] < best_cost:
            best_cost = cost[idx]
            best = (opd, refls[idx[0]], phases[idx[1]])
    return float(best[0]), float(best[1]), float(best[2])


# ---------------------------------------------------------------------------
# Step 3: refinement
# ---------------------------------------------------------------------------
class ResponseFit:
    """Residual and Jacobian of the instrument response against a raw series.

    The OPD enters the parameter vector multiplied by the grid span (fringe
    cycles across the band) so every column of the Jacobian has a similar
    scale. With ``fixed_gain`` the gain is ``scale * gain_shape`` and only the
    scale is free.
    """

    def __init__(self, y, grid: WavenumberGrid, regime: WaveRegime, degree: int,
                 gain_shape: np.ndarray | None = None):
        self.y = np.asarray(y, dtype=float)
        self.grid = grid
        self.regime = regime
        self.degree = degree
        self.vander = _vandermonde(grid, degree)
        self.opd_scale = grid.span
        self.gain_shape = None if gain_shape is None else self.vander @ np.asarray(gain_shape, float)
        self._gain_coeffs = None if gain_shape is None else np.asarray(gain_shape, float)
        self.n_gain = 1 if gain_shape is not None else degree + 1
        self.n_params = self.n_gain + degree + 3

    def pack(self, params: TransmittanceParams) -> np.ndarray:
        gain = [1.0] if self.gain_shape is not None else list(params.gain)
        return np.array([*gain, *params.reflectivity, params.opd * self.opd_scale, params.phase_shift])

    def unpack(self, x) -> TransmittanceParams:
        x = np.asarray(x, dtype=float)
        n = self.n_gain
        gain = x[0] * self._gain_coeffs if self.gain_shape is not None else x[:n]
        refl = x[n:n + self.degree + 1]
        return TransmittanceParams(gain, refl, x[-2] / self.opd_scale, x[-1])

    def _parts(self, x):
        x = np.asarray(x, dtype=float)
        n = self.n_gain
        gain = x[0] * self.gain_shape if self.gain_shape is not None else self.vander @ x[:n]
        refl = self.vander @ x[n:n + self.degree + 1]
        refl_c = np.clip(refl, 0.0, R_CLAMP_MAX)
        phi = 2.0 * np.pi * (x[-2] / self.opd_scale) * self.grid.sigma - x[-1]
        return gain, refl, refl_c, phi

    def model(self, x) -> np.ndarray:
        gain, _, refl_c, phi = self._parts(x)
        return gain * mean_scaled_transmittance(refl_c, phi, self.regime)

    def residual(self, x) -> np.ndarray:
        return self.model(x) - self.y

    def jacobian(self, x) -> np.ndarray:
        gain, refl, refl_c, phi = self._parts(x)
        val, d_r, d_phi = mean_scaled_transmittance_derivatives(refl_c, phi, self.regime)
        d_r = np.where((refl > 0.0) & (refl < R_CLAMP_MAX), d_r, 0.0)
        n = self.n_gain
        jac = np.empty((self.y.size, self.n_params))
        if self.gain_shape is not None:
            jac[:, 0] = self.gain_shape * val
        else:
            jac[:, :n] = self.vander * val[:, None]
        jac[:, n:n + self.degree + 1] = self.vander * (gain * d_r)[:, None]
        jac[:, -2] = gain * d_phi * 2.0 * np.pi * self.grid.sigma / self.opd_scale
        jac[:, -1] = -gain * d_phi
        return jac

    def problem(self) -> LmProblem:
        return LmProblem(self.residual, self.n_params, self.jacobian)


def refine(y, grid: WavenumberGrid, initial: TransmittanceParams, regime: WaveRegime,
           lm_config: LmConfig | None = None, fixed_gain: bool = False
           ) -> tuple[TransmittanceParams, LmReport]:
    """Least-squares fit of every parameter to the raw series, from ``initial``.

    ``fixed_gain`` keeps the shape of the initial gain polynomial and fits
    only its scale.
    """
    fit = ResponseFit(y, grid, regime, initial.degree, initial.gain if fixed_gain else None)
    report = lm_solve(fit.problem(), fit.pack(initial), lm_config)
    x = report.params.copy()
    if x[-2] < 0:
        # cos is even: a negative OPD is the mirror solution with opposite phase
        x[-2], x[-1] = -x[-2], -x[-1]
    return fit.unpack(x), report


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------
def _initial_params(gain, opd, r0, phi0, degree) -> TransmittanceParams:
    refl = np.zeros(degree + 1)
    refl[0] = r0
    return TransmittanceParams(gain, refl, opd, phi0)


def characterize_pixel(stats: PixelStatistics, grid: WavenumberGrid, config: IrcaConfig | None = None,
                       nominal_opd: float | None = None) -> CharacterizationResult:
    config = config or IrcaConfig()
    if stats.y.size != grid.size:
        raise ValueError(f"statistics have {stats.y.size} samples, grid has {grid.size}")
    flags: list[str] = []

    gain = estimate_gain(stats.w, grid, config.degree, config.gain_lm)
    v = fringe_contrast_series(stats.u, gain, grid)
    interval = config.opd_interval or default_opd_interval(grid, nominal_opd, config.opd_tolerance)

    if config.initializer == "ml":
        peak = periodogram_opd(v, grid, interval, config.oversampling)
        if peak.degenerate:
            flags.append("degenerate_opd")
        alpha = ml_amplitude(v, grid, peak.opd)
        if alpha > ALPHA_CAP:
            flags.append("amplitude_capped")
        r0 = ml_reflectivity(min(alpha, ALPHA_CAP), paper=config.paper_reflectivity)
        phase_est = ml_phase(v, grid, peak.opd)
        if phase_est.degenerate:
            flags.append("degenerate_phase")
        initial = InitialEstimate(gain, peak.opd, r0, phase_est.phase, alpha)
    else:
        opds = opd_search_grid(grid, interval, config.es_oversampling)
        phases = -np.pi + 2.0 * np.pi * np.arange(config.es_phases) / config.es_phases
        opd, r0, phi0 = es_initialize(v, grid, opds, config.es_reflectivities, phases, config.regime)
        initial = InitialEstimate(gain, opd, r0, phi0)

    start = _initial_params(gain, initial.opd, initial.reflectivity, initial.phase_shift, config.degree)
    y_mean = stats.y.mean()
    initial_rmse = fit_rmse(stats.y, transmittance_response(start, grid.sigma, config.regime, grid,
                                                            clamp=True), y_mean)
    params, report = refine(stats.y, grid, start, config.regime, config.refine_lm, config.fixed_gain)
    fitted = transmittance_response(params, grid.sigma, config.regime, grid, clamp=True)
    rmse = fit_rmse(stats.y, fitted, y_mean)
    try:
        params.check(grid)
    except ValueError as exc:
        flags.append(f"invalid_params: {exc}")
    if not report.converged:
        flags.append(f"not_converged: {report.reason}")
    return CharacterizationResult(params, rmse, initial, initial_rmse, report, flags)


@dataclass
class PixelResult:
    interferometer: int
    pixel: tuple[int, int]
    result: CharacterizationResult | None
    error: str | None = None

    @property
    def converged(self) -> bool:
        return self.result is not None and self.result.converged


@dataclass
class DeviceResults:
    grid: WavenumberGrid
    config: IrcaConfig
    pixel_mode: str
    pixels: list[PixelResult]

    def __len__(self):
        return len(self.pixels)

    def __iter__(self):
        return iter(self.pixels)

    def central(self, layout: DeviceLayout) -> list[PixelResult]:
        centers = {layout.center_pixel(k) for k in range(layout.n_interferometers)}
        return [p for p in self.pixels if p.pixel in centers]


def _characterize_task(args) -> PixelResult:
    stats, grid, config, nominal = args
    try:
        result = characterize_pixel(stats, grid, config, nominal)
        return PixelResult(stats.interferometer, stats.pixel, result)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return PixelResult(stats.interferometer, stats.pixel, None, f"{type(exc).__name__}: {exc}")


def select_pixels(layout: DeviceLayout, selector) -> list[tuple[int, int]]:
    """``central``: one pixel per subimage; ``all``: every subimage pixel; or explicit pixels."""
    if isinstance(selector, str):
        if selector == "central":
            return [layout.center_pixel(k) for k in range(layout.n_interferometers)]
        if selector == "all":
            out = []
            for k in range(layout.n_interferometers):
                r0, r1, c0, c1 = layout.bounds(k)
                out.extend((r, c) for r in range(r0, r1) for c in range(c0, c1))
            return out
        raise ValueError(f"unknown pixel selector {selector!r}")
    return [tuple(int(v) for v in p) for p in selector]


def characterize_device(cube: Datacube, layout: DeviceLayout, config: IrcaConfig | None = None,
                        pixels: str | Iterable[Sequence[int]] = "central", kernel: int = 11,
                        percentile: float = 90.0, flat_field: str = "global",
                        jobs: int | None = 1, use_nominal: bool = True) -> DeviceResults:
    """Characterize selected pixels independently; failures are recorded per pixel."""
    config = config or IrcaConfig()
    if cube.shape != layout.focal_shape:
        raise ValueError(f"datacube frames are {cube.shape}, layout expects {layout.focal_shape}")
    mode = pixels if isinstance(pixels, str) else "custom"
    cube = equalize_power(cube)
    if flat_field == "global":
        global_w = flat_field_statistic(cube, percentile)
        per_subimage = None
    elif flat_field == "subimage":
        global_w, per_subimage = None, subimage_flat_field(cube, layout, percentile)
    else:
        raise ValueError(f"flat_field must be 'global' or 'subimage', got {flat_field!r}")

    tasks = []
    for pixel in select_pixels(layout, pixels):
        k = layout.interferometer_at(pixel)
        if k is None:
            raise ValueError(f"pixel {pixel} is not inside any subimage")
        w = global_w if per_subimage is None else per_subimage[k]
        stats = pixel_statistics(cube, layout, pixel, w, kernel)
        nominal = layout.nominal_opd(k) if use_nominal and config.opd_interval is None else None
        tasks.append((stats, cube.grid, config, nominal))

    jobs = jobs or os.cpu_count() or 1
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_characterize_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_characterize_task(t) for t in tasks]
    results.sort(key=lambda p: (p.interferometer, p.pixel))
    return DeviceResults(cube.grid, config, mode, results)
