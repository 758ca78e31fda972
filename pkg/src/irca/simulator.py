"""Synthetic flat-field characterization datacubes for staircase Fabry-Perot devices."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import (TransmittanceParams, WaveRegime, WavenumberGrid, mean_scaled_transmittance,
                    opd_from_geometry, phase, poly_eval)

NM_TO_CM = 1e-7


class LayoutError(ValueError):
    """The requested subimage tiling does not fit the focal plane."""


class NyquistWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DeviceLayout:
    """Geometry of a multi-aperture device.

    Subimages are tiled row-major from the top-left corner, as many per row as
    fit in the focal-plane width. Thicknesses are in nm; ``angular_scale`` is
    the incidence angle in radians per pixel of distance from a subimage's
    optical axis. ``axis_offset`` shifts every optical axis away from the
    geometric subimage center, in pixels (row, col).
    """

    n_interferometers: int
    thickness_step_nm: float
    base_thickness_nm: float = 0.0
    refractive_index: float = 1.0
    focal_shape: tuple[int, int] = (512, 640)
    subimage_shape: tuple[int, int] = (64, 64)
    angular_scale: float = 0.0
    axis_offset: tuple[float, float] = (0.0, 0.0)
    axis_offsets: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "focal_shape", tuple(int(v) for v in self.focal_shape))
        object.__setattr__(self, "subimage_shape", tuple(int(v) for v in self.subimage_shape))
        object.__setattr__(self, "axis_offset", tuple(float(v) for v in self.axis_offset))
        if self.n_interferometers < 1:
            raise LayoutError("n_interferometers must be >= 1")
        if min(self.focal_shape) < 1 or min(self.subimage_shape) < 1:
            raise LayoutError("focal plane and subimage sizes must be positive")
        if self.thickness_step_nm < 0 or self.base_thickness_nm < 0:
            raise LayoutError("thicknesses must be non-negative")
        if self.refractive_index < 1:
            raise LayoutError("refractive_index must be >= 1")
        if self.angular_scale < 0:
            raise LayoutError("angular_scale must be >= 0")
        sh, sw = self.subimage_shape
        fh, fw = self.focal_shape
        if sw > fw or sh > fh:
            raise LayoutError(f"subimage {sh}x{sw} is larger than the focal plane {fh}x{fw}")
        rows, cols = self.grid_shape
        if rows * sh > fh:
            raise LayoutError(
                f"tiling overflow: {self.n_interferometers} subimages of {sh}x{sw} need "
                f"{rows} rows x {cols} columns ({rows * sh} px) but the focal plane is {fh} px high")
        if self.axis_offsets is not None:
            offsets = np.asarray(self.axis_offsets, dtype=float).reshape(self.n_interferometers, 2)
            object.__setattr__(self, "axis_offsets", offsets)

    @property
    def grid_shape(self) -> tuple[int, int]:
        cols = min(self.focal_shape[1] // self.subimage_shape[1], self.n_interferometers)
        rows = math.ceil(self.n_interferometers / cols)
        return rows, cols

    def position(self, k: int) -> tuple[int, int]:
        """(row, col) of interferometer ``k`` in the subimage grid."""
        self._check_index(k)
        return divmod(k, self.grid_shape[1])

    def origin(self, k: int) -> tuple[int, int]:
        row, col = self.position(k)
        return row * self.subimage_shape[0], col * self.subimage_shape[1]

    def bounds(self, k: int) -> tuple[int, int, int, int]:
        """Half-open pixel bounds (r0, r1, c0, c1) of subimage ``k``."""
        r0, c0 = self.origin(k)
        return r0, r0 + self.subimage_shape[0], c0, c0 + self.subimage_shape[1]

    def center_pixel(self, k: int) -> tuple[int, int]:
        r0, c0 = self.origin(k)
        return r0 + self.subimage_shape[0] // 2, c0 + self.subimage_shape[1] // 2

    def optical_axis(self, k: int) -> tuple[float, float]:
        """Fractional focal-plane coordinates of the optical axis of subimage ``k``."""
        r0, c0 = self.origin(k)
        dr, dc = self.axis_offset
        if self.axis_offsets is not None:
            dr, dc = dr + self.axis_offsets[k, 0], dc + self.axis_offsets[k, 1]
        return r0 + (self.subimage_shape[0] - 1) / 2 + dr, c0 + (self.subimage_shape[1] - 1) / 2 + dc

    def interferometer_at(self, pixel: tuple[int, int]) -> int | None:
        r, c = pixel
        sh, sw = self.subimage_shape
        rows, cols = self.grid_shape
        if not (0 <= r < self.focal_shape[0] and 0 <= c < self.focal_shape[1]):
            return None
        row, col = r // sh, c // sw
        if row >= rows or col >= cols:
            return None
        k = row * cols + col
        return k if k < self.n_interferometers else None

    def thickness_nm(self, k: int) -> float:
        self._check_index(k)
        return self.base_thickness_nm + k * self.thickness_step_nm

    def nominal_opd(self, k: int) -> float:
        """On-axis OPD in cm."""
        return float(opd_from_geometry(self.refractive_index, self.thickness_nm(k) * NM_TO_CM, 0.0))

    @property
    def nominal_opd_step(self) -> float:
        return 2.0 * self.refractive_index * self.thickness_step_nm * NM_TO_CM

    def incidence_angles(self, k: int) -> np.ndarray:
        """Incidence angle over subimage ``k`` as a (sh, sw) array."""
        r0, r1, c0, c1 = self.bounds(k)
        ar, ac = self.optical_axis(k)
        rr, cc = np.mgrid[r0:r1, c0:c1]
        return self.angular_scale * np.hypot(rr - ar, cc - ac)

    def _check_index(self, k):
        if not 0 <= k < self.n_interferometers:
            raise IndexError(f"interferometer {k} outside [0, {self.n_interferometers})")

    def to_dict(self) -> dict:
        out = {
            "n_interferometers": self.n_interferometers,
            "thickness_step_nm": self.thickness_step_nm,
            "base_thickness_nm": self.base_thickness_nm,
            "refractive_index": self.refractive_index,
            "focal_shape": list(self.focal_shape),
            "subimage_shape": list(self.subimage_shape),
            "angular_scale": self.angular_scale,
            "axis_offset": list(self.axis_offset),
        }
        if self.axis_offsets is not None:
            out["axis_offsets"] = self.axis_offsets.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> DeviceLayout:
        known = {"n_interferometers", "thickness_step_nm", "base_thickness_nm", "refractive_index",
                 "focal_shape", "subimage_shape", "angular_scale", "axis_offset", "axis_offsets"}
        unknown = set(data) - known
        if unknown:
            raise LayoutError(f"unknown layout fields: {sorted(unknown)}")
        return cls(**data)


def build_layout(config: dict) -> DeviceLayout:
    """Layout from a plain mapping; ``angular_scale_deg`` is accepted as degrees per pixel."""
    config = dict(config)
    if "angular_scale_deg" in config:
        config["angular_scale"] = math.radians(config.pop("angular_scale_deg"))
    return DeviceLayout.from_dict(config)


def pixel_opd(layout: DeviceLayout, k: int, offset: tuple[float, float] | np.ndarray) -> float | np.ndarray:
    """OPD (cm) at a pixel offset (drow, dcol) from the optical axis of subimage ``k``."""
    offset = np.asarray(offset, dtype=float)
    radius = np.hypot(offset[..., 0], offset[..., 1])
    theta = layout.angular_scale * radius
    return opd_from_geometry(layout.refractive_index, layout.thickness_nm(k) * NM_TO_CM, theta)


# ---------------------------------------------------------------------------
# Noise and datacubes
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class NoiseModel:
    """``relative_std=0`` means no noise.

    The standard deviation at a pixel is ``relative_std`` times the mean of
    that pixel's noiseless series over all acquisitions.
    """

    relative_std: float = 0.0

    def __post_init__(self):
        if not self.relative_std >= 0:
            raise ValueError("noise std must be >= 0")

    @classmethod
    def none(cls) -> NoiseModel:
        return cls(0.0)

    @classmethod
    def gaussian(cls, relative_std: float) -> NoiseModel:
        return cls(relative_std)


@dataclass(frozen=True)
class Datacube:
    grid: WavenumberGrid
    frames: np.ndarray
    incident_power: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        power = np.asarray(self.incident_power, dtype=float).ravel()
        if frames.ndim != 3 or frames.shape[0] != self.grid.size:
            raise ValueError(f"frames shape {frames.shape} does not match {self.grid.size} acquisitions")
        if power.shape != (self.grid.size,):
            raise ValueError("one incident power per acquisition is required")
        if np.any(power <= 0) or not np.all(np.isfinite(power)):
            raise ValueError("incident power must be positive and finite")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames must be finite")
        frames.setflags(write=False)
        power.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "incident_power", power)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    @property
    def n_acq(self) -> int:
        return self.frames.shape[0]


def incident_power_curve(grid: WavenumberGrid, kind: str = "constant") -> np.ndarray:
    """Relative lamp power per acquisition: ``constant`` or a smooth ``lamp`` bump."""
    if kind == "constant":
        return np.ones(grid.size)
    if kind == "lamp":
        x = grid.normalized
        return 0.4 + np.exp(-((x - 0.2) / 0.7) ** 2)
    raise ValueError(f"unknown incident power kind {kind!r}")


def make_truth(layout: DeviceLayout, gain: Sequence[float], reflectivity: Sequence[float],
               phase_shift: float | Sequence[float] = 0.0,
               tilt_per_column: float = 0.0) -> list[TransmittanceParams]:
    """Ground-truth parameters for every interferometer.

    ``tilt_per_column`` (cm of OPD per subimage column, measured from the row
    center) emulates a tilted plate: it perturbs the staircase linearly along
    each row. The shorter coefficient list is zero-padded to a common degree.
    """
    gain = np.asarray(gain, dtype=float)
    reflectivity = np.asarray(reflectivity, dtype=float)
    n = max(gain.size, reflectivity.size)  # zero-pad the shorter polynomial
    gain = np.pad(gain, (0, n - gain.size))
    reflectivity = np.pad(reflectivity, (0, n - reflectivity.size))
    cols = layout.grid_shape[1]
    shifts = np.broadcast_to(np.asarray(phase_shift, dtype=float), (layout.n_interferometers,))
    truth = []
    for k in range(layout.n_interferometers):
        col = layout.position(k)[1]
        opd = layout.nominal_opd(k) + tilt_per_column * (col - (cols - 1) / 2)
        truth.append(TransmittanceParams(gain, reflectivity, max(opd, 0.0), shifts[k]))
    return truth


def nyquist_check(layout: DeviceLayout, grid: WavenumberGrid) -> dict:
    """Compare the sweep step with the aliasing bound of the largest nominal OPD."""
    opd_max = layout.nominal_opd(layout.n_interferometers - 1)
    if opd_max <= 0:
        return {"pass": True, "margin": math.inf, "opd_max_cm": opd_max, "bound_cm1": math.inf}
    bound = 1.0 / (2.0 * opd_max)
    margin = bound / grid.mean_step if grid.span > 0 else math.inf
    return {"pass": bool(margin > 1.0), "margin": margin, "opd_max_cm": opd_max, "bound_cm1": bound}


def simulate_subimage(layout: DeviceLayout, k: int, grid: WavenumberGrid, params: TransmittanceParams,
                      regime: WaveRegime) -> np.ndarray:
    """Noiseless, unit-power response over subimage ``k``: array (N_a, sh, sw)."""
    cos_theta = np.cos(layout.incidence_angles(k))
    gain = poly_eval(params.gain, grid.sigma, grid)[:, None, None]
    refl = poly_eval(params.reflectivity, grid.sigma, grid)[:, None, None]
    phi = phase(grid.sigma[:, None, None], params.opd * cos_theta[None], params.phase_shift)
    return gain * mean_scaled_transmittance(refl, phi, regime)


def simulate_datacube(layout: DeviceLayout, grid: WavenumberGrid, truth: Sequence[TransmittanceParams],
                      regime: WaveRegime, noise: NoiseModel | None = None, seed: int | None = 0,
                      power: str | np.ndarray = "constant", out: np.ndarray | None = None) -> Datacube:
    """Render the flat-field sweep: frame i holds response(sigma_i) * power_i (+ noise).

    Pixels outside every subimage stay at zero. ``out`` may be a preallocated
    (N_a, H, W) float64 array, e.g. a memory map.
    """
    if len(truth) != layout.n_interferometers:
        raise ValueError(f"expected {layout.n_interferometers} truth entries, got {len(truth)}")
    noise = noise or NoiseModel.none()
    check = nyquist_check(layout, grid)
    if not check["pass"]:
        warnings.warn(f"sweep step violates the Nyquist condition (margin {check['margin']:.3f})",
                      NyquistWarning, stacklevel=2)
    incident = incident_power_curve(grid, power) if isinstance(power, str) else np.asarray(power, float)
    shape = (grid.size, *layout.focal_shape)
    frames = np.zeros(shape) if out is None else out
    if out is not None:
        frames[...] = 0.0
    rng = np.random.default_rng(seed)
    for k, params in enumerate(truth):
        r0, r1, c0, c1 = layout.bounds(k)
        block = simulate_subimage(layout, k, grid, params, regime) * incident[:, None, None]
        if noise.relative_std > 0:
            level = noise.relative_std * block.mean(axis=0)
            block = block + rng.standard_normal(block.shape) * level[None]
        frames[:, r0:r1, c0:c1] = block
    return Datacube(grid, frames, incident)
