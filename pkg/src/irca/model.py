"""Fabry-Perot transmittance responses and their parameterization.

Everything here is a pure function of its inputs. Wavenumbers are in cm^-1,
optical path differences in cm, phases in radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: Upper bound applied to the reflectivity when ``clamp=True``.
R_CLAMP_MAX = 1.0 - 1e-6


class ReflectivityError(ValueError):
    """Raised when a reflectivity lies outside the physical range [0, 1)."""


# ---------------------------------------------------------------------------
# Regimes, grids and parameters
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class WaveRegime:
    """Number of emerging waves summed in the cavity.

    ``waves=None`` is the infinite (Airy) regime. ``WaveRegime.two()`` is just
    ``WaveRegime(2)``.
    """

    waves: int | None = None

    def __post_init__(self):
        if self.waves is not None and (int(self.waves) != self.waves or self.waves < 1):
            raise ValueError(f"wave count must be an integer >= 1, got {self.waves!r}")

    @classmethod
    def two(cls) -> WaveRegime:
        return cls(2)

    @classmethod
    def finite(cls, waves: int) -> WaveRegime:
        return cls(int(waves))

    @classmethod
    def infinite(cls) -> WaveRegime:
        return cls(None)

    @property
    def is_infinite(self) -> bool:
        return self.waves is None

    @classmethod
    def parse(cls, text: str) -> WaveRegime:
        """Parse ``two``, ``finite:W`` or ``infinite``."""
        text = text.strip().lower()
        if text == "two":
            return cls.two()
        if text == "infinite":
            return cls.infinite()
        if text.startswith("finite:"):
            try:
                waves = int(text.split(":", 1)[1])
            except ValueError:
                raise ValueError(f"bad wave count in regime {text!r}") from None
            return cls.finite(waves)
        raise ValueError(f"unknown regime {text!r} (expected two, finite:W or infinite)")

    @property
    def label(self) -> str:
        if self.waves is None:
            return "infinite"
        if self.waves == 2:
            return "two"
        return f"finite:{self.waves}"

    def __str__(self):
        return self.label


@dataclass(frozen=True)
class WavenumberGrid:
    """Central wavenumbers of the monochromatic sweep, strictly increasing."""

    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float).ravel()
        if sigma.size < 1:
            raise ValueError("a wavenumber grid needs at least one sample")
        if not np.all(np.isfinite(sigma)) or np.any(np.diff(sigma) <= 0):
            raise ValueError("wavenumbers must be finite and strictly increasing")
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def regular(cls, sigma_min: float, sigma_max: float, count: int) -> WavenumberGrid:
        return cls(np.linspace(sigma_min, sigma_max, int(count)))

    @property
    def size(self) -> int:
        return self.sigma.size

    @property
    def sigma_min(self) -> float:
        return float(self.sigma[0])

    @property
    def sigma_max(self) -> float:
        return float(self.sigma[-1])

    @property
    def span(self) -> float:
        return self.sigma_max - self.sigma_min

    @property
    def mean_step(self) -> float:
        """Average step, defined as (sigma_max - sigma_min) / N_a."""
        return self.span / self.size

    @property
    def max_opd(self) -> float:
        """Largest OPD resolvable without aliasing, 1 / (2 mean_step)."""
        return 1.0 / (2.0 * self.mean_step) if self.span > 0 else math.inf

    @property
    def opd_resolution(self) -> float:
        """Base periodogram bin, 1 / (2 N_a mean_step)."""
        return 1.0 / (2.0 * self.span) if self.span > 0 else math.inf

    def normalize(self, sigma) -> np.ndarray:
        """Affine map of the grid range onto [-1, 1]; a single-sample grid maps to 0."""
        sigma = np.asarray(sigma, dtype=float)
        if self.span == 0:
            return np.zeros_like(sigma)
        return 2.0 * (sigma - self.sigma_min) / self.span - 1.0

    @property
    def normalized(self) -> np.ndarray:
        return self.normalize(self.sigma)

    def affine_map(self) -> dict:
        return {"sigma_min": self.sigma_min, "sigma_max": self.sigma_max,
                "normalized": "2*(sigma-sigma_min)/(sigma_max-sigma_min)-1"}


def wrap_phase(phi):
    """Wrap to [-pi, pi)."""
    wrapped = np.mod(np.asarray(phi, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


@dataclass(frozen=True)
class TransmittanceParams:
    """Gain and reflectivity polynomials (normalized-wavenumber basis), OPD and phase shift."""

    gain: np.ndarray
    reflectivity: np.ndarray
    opd: float
    phase_shift: float = 0.0

    def __post_init__(self):
        gain = np.atleast_1d(np.asarray(self.gain, dtype=float)).copy()
        refl = np.atleast_1d(np.asarray(self.reflectivity, dtype=float)).copy()
        if gain.ndim != 1 or gain.shape != refl.shape:
            raise ValueError("gain and reflectivity need the same polynomial degree")
        if not self.opd >= 0:
            raise ValueError(f"OPD must be non-negative, got {self.opd}")
        gain.setflags(write=False)
        refl.setflags(write=False)
        object.__setattr__(self, "gain", gain)
        object.__setattr__(self, "reflectivity", refl)
        object.__setattr__(self, "opd", float(self.opd))
        object.__setattr__(self, "phase_shift", wrap_phase(self.phase_shift))

    @property
    def degree(self) -> int:
        return self.gain.size - 1

    @property
    def n_params(self) -> int:
        return 2 * self.degree + 4

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.gain, self.reflectivity, [self.opd, self.phase_shift]])

    @classmethod
    def from_vector(cls, beta, degree: int) -> TransmittanceParams:
        beta = np.asarray(beta, dtype=float)
        n = degree + 1
        if beta.size != 2 * degree + 4:
            raise ValueError(f"expected {2 * degree + 4} parameters, got {beta.size}")
        return cls(beta[:n], beta[n:2 * n], beta[2 * n], beta[2 * n + 1])

    def check(self, grid: WavenumberGrid) -> None:
        """Validate gain > 0 and reflectivity in [0, 1) on the grid."""
        gain = poly_eval(self.gain, grid.sigma, grid)
        refl = poly_eval(self.reflectivity, grid.sigma, grid)
        if np.any(gain <= 0):
            raise ValueError("gain polynomial is not positive on the grid")
        if np.any(refl < 0) or np.any(refl >= 1):
            raise ReflectivityError("reflectivity polynomial leaves [0, 1) on the grid")

    def to_dict(self) -> dict:
        return {"gain": self.gain.tolist(), "reflectivity": self.reflectivity.tolist(),
                "opd_cm": self.opd, "phase_shift": self.phase_shift}

    @classmethod
    def from_dict(cls, data: dict) -> TransmittanceParams:
        return cls(data["gain"], data["reflectivity"], data["opd_cm"], data.get("phase_shift", 0.0))


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------
def phase(sigma, opd, phase_shift):
    """Round-trip phase 2*pi*opd*sigma - phase_shift."""
    return 2.0 * np.pi * opd * np.asarray(sigma, dtype=float) - phase_shift


def opd_from_geometry(refractive_index, thickness, inner_angle=0.0):
    """OPD between consecutive emerging waves, 2 n d cos(theta)."""
    return 2.0 * refractive_index * thickness * np.cos(inner_angle)


# ---------------------------------------------------------------------------
# Transmittance
# ---------------------------------------------------------------------------
def _reflectivity(reflectivity, clamp: bool) -> np.ndarray:
    r = np.asarray(reflectivity, dtype=float)
    if clamp:
        return np.clip(r, 0.0, R_CLAMP_MAX)
    if np.any(r < 0) or np.any(r >= 1) or np.any(np.isnan(r)):
        raise ReflectivityError("reflectivity must lie in [0, 1)")
    return r


def transmittance(reflectivity, phi, regime: WaveRegime, clamp: bool = False):
    """Irradiance transmittance of a lossless cavity with ``regime.waves`` waves."""
    r = _reflectivity(reflectivity, clamp)
    phi = np.asarray(phi, dtype=float)
    direct = (1.0 - r) ** 2
    if regime.is_infinite:
        out = direct / (direct + 4.0 * r * np.sin(phi / 2.0) ** 2)
    elif regime.waves == 2:
        out = (1.0 + r * r + 2.0 * r * np.cos(phi)) * direct
    else:
        w = regime.waves
        rw = r ** w
        num = 1.0 + rw * rw - 2.0 * rw * np.cos(w * phi)
        out = num / (1.0 + r * r - 2.0 * r * np.cos(phi)) * direct
    return out


def mean_scale_factor(reflectivity, regime: WaveRegime, clamp: bool = False):
    """Factor bringing the phase average of the transmittance to one."""
    r = _reflectivity(reflectivity, clamp)
    if regime.is_infinite:
        return (1.0 + r) / (1.0 - r)
    return (1.0 + r) / ((1.0 - r ** (2 * regime.waves)) * (1.0 - r))


def mean_scaled_transmittance(reflectivity, phi, regime: WaveRegime, clamp: bool = False):
    """Transmittance divided by its mean over one phase period."""
    r = _reflectivity(reflectivity, clamp)
    phi = np.asarray(phi, dtype=float)
    one_minus_r2 = 1.0 - r * r
    den = 1.0 + r * r - 2.0 * r * np.cos(phi)
    if regime.is_infinite:
        return one_minus_r2 / den
    w = regime.waves
    if w == 2:
        return 1.0 + 2.0 * r * np.cos(phi) / (1.0 + r * r)
    rw = r ** w
    num = 1.0 + rw * rw - 2.0 * rw * np.cos(w * phi)
    return one_minus_r2 / (1.0 - rw * rw) * num / den


def mean_scaled_transmittance_derivatives(reflectivity, phi, regime: WaveRegime):
    """Value and partial derivatives (d/dR, d/dphi) of the mean-scaled transmittance.

    ``reflectivity`` must already be inside [0, 1).
    """
    r = np.asarray(reflectivity, dtype=float)
    phi = np.asarray(phi, dtype=float)
    cos_p, sin_p = np.cos(phi), np.sin(phi)
    den = 1.0 + r * r - 2.0 * r * cos_p
    if regime.is_infinite:
        c = 1.0 - r * r
        val = c / den
        d_r = (-2.0 * r * den - c * (2.0 * r - 2.0 * cos_p)) / den ** 2
        d_phi = -c * 2.0 * r * sin_p / den ** 2
        return val, d_r, d_phi
    w = regime.waves
    if w == 2:
        s = 1.0 + r * r
        val = 1.0 + 2.0 * r * cos_p / s
        d_r = 2.0 * cos_p * (1.0 - r * r) / s ** 2
        d_phi = -2.0 * r * sin_p / s
        return val, d_r, d_phi
    rw = r ** w
    r2w = rw * rw
    cos_w, sin_w = np.cos(w * phi), np.sin(w * phi)
    c = (1.0 - r * r) / (1.0 - r2w)
    dc = (-2.0 * r * (1.0 - r2w) + (1.0 - r * r) * 2.0 * w * r ** (2 * w - 1)) / (1.0 - r2w) ** 2
    num = 1.0 + r2w - 2.0 * rw * cos_w
    dnum = 2.0 * w * r ** (2 * w - 1) - 2.0 * w * r ** (w - 1) * cos_w
    dden = 2.0 * r - 2.0 * cos_p
    val = c * num / den
    d_r = dc * num / den + c * (dnum * den - num * dden) / den ** 2
    d_phi = c * (2.0 * w * rw * sin_w * den - num * 2.0 * r * sin_p) / den ** 2
    return val, d_r, d_phi


# ---------------------------------------------------------------------------
# Polynomials and the instrument response
# ---------------------------------------------------------------------------
def poly_eval(coeffs, sigma, grid: WavenumberGrid):
    """Evaluate a power series in the normalized wavenumber of ``grid``."""
    return np.polynomial.polynomial.polyval(grid.normalize(sigma), np.asarray(coeffs, dtype=float))


def transmittance_response(params: TransmittanceParams, sigma, regime: WaveRegime,
                           grid: WavenumberGrid, clamp: bool = False):
    """Gain times mean-scaled transmittance at the given wavenumbers."""
    sigma = np.asarray(sigma, dtype=float)
    gain = poly_eval(params.gain, sigma, grid)
    refl = poly_eval(params.reflectivity, sigma, grid)
    phi = phase(sigma, params.opd, params.phase_shift)
    return gain * mean_scaled_transmittance(refl, phi, regime, clamp=clamp)


# ---------------------------------------------------------------------------
# Finesse regimes
# ---------------------------------------------------------------------------
def regime_rmse(reflectivity: float, regime: WaveRegime, phase_samples: int = 10_000) -> float:
    """RMSE over one phase period between the mean-scaled W-wave and Airy responses."""
    phi = np.linspace(0.0, 2.0 * np.pi, phase_samples, endpoint=False)
    diff = (mean_scaled_transmittance(reflectivity, phi, regime)
            - mean_scaled_transmittance(reflectivity, phi, WaveRegime.infinite()))
    return float(np.sqrt(np.mean(diff ** 2)))


def regime_max_reflectivity(regime: WaveRegime, rmse_threshold: float,
                            phase_samples: int = 10_000, r_samples: int = 10_000) -> float:
    """Largest reflectivity whose W-wave response stays within ``rmse_threshold`` of Airy.

    The search bisects over ``r_samples`` equally spaced reflectivities in
    [0, 1), relying on the RMSE growing with R.
    """
    if regime.is_infinite:
        raise ValueError("the regime threshold is only defined for a finite wave count")
    if not rmse_threshold > 0:
        raise ValueError("RMSE threshold must be positive")
    r_grid = np.arange(r_samples) / r_samples
    if regime_rmse(r_grid[0], regime, phase_samples) > rmse_threshold:
        raise ValueError("threshold cannot be met even at zero reflectivity")
    lo, hi = 0, r_samples - 1
    if regime_rmse(r_grid[hi], regime, phase_samples) <= rmse_threshold:
        return float(r_grid[hi])
    # invariant: rmse(lo) <= threshold < rmse(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if regime_rmse(r_grid[mid], regime, phase_samples) <= rmse_threshold:
            lo = mid
        else:
            hi = mid
    return float(r_grid[lo])


def regime_max_difference(reflectivity: float, regime: WaveRegime, phase_samples: int = 10_000) -> float:
    """Largest absolute gap over phase between mean-scaled W-wave and Airy responses."""
    phi = np.linspace(0.0, 2.0 * np.pi, phase_samples, endpoint=False)
    diff = (mean_scaled_transmittance(reflectivity, phi, regime)
            - mean_scaled_transmittance(reflectivity, phi, WaveRegime.infinite()))
    return float(np.max(np.abs(diff)))


__all__ = [
    "R_CLAMP_MAX", "ReflectivityError", "WaveRegime", "WavenumberGrid", "TransmittanceParams",
    "wrap_phase", "phase", "opd_from_geometry", "transmittance", "mean_scale_factor",
    "mean_scaled_transmittance", "mean_scaled_transmittance_derivatives", "poly_eval",
    "transmittance_response", "regime_rmse", "regime_max_reflectivity", "regime_max_difference",
]
