"""Per-pixel sufficient statistics extracted from a characterization datacube."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulator import Datacube, DeviceLayout


@dataclass(frozen=True)
class PixelStatistics:
    y: np.ndarray       # raw series
    u: np.ndarray       # neighborhood mean
    w: np.ndarray       # flat-field statistic
    pixel: tuple[int, int] | None = None
    interferometer: int | None = None

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=float).ravel() for a in (self.y, self.u, self.w)]
        if len({a.size for a in arrays}) != 1:
            raise ValueError("y, u and w must have the same length")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("statistics must be finite")
        for name, a in zip("yuw", arrays):
            object.__setattr__(self, name, a)


def equalize_power(cube: Datacube) -> Datacube:
    """Divide each frame by its incident power."""
    power = np.asarray(cube.incident_power)
    if np.any(power <= 0):
        raise ValueError("incident power must be positive")
    if np.all(power == 1.0):
        return cube
    return Datacube(cube.grid, cube.frames / power[:, None, None], np.ones_like(power))


def _check_pixel(cube: Datacube, pixel) -> tuple[int, int]:
    r, c = int(pixel[0]), int(pixel[1])
    h, w = cube.shape
    if not (0 <= r < h and 0 <= c < w):
        raise IndexError(f"pixel {pixel} outside the {h}x{w} focal plane")
    return r, c


def raw_series(cube: Datacube, pixel) -> np.ndarray:
    r, c = _check_pixel(cube, pixel)
    return np.array(cube.frames[:, r, c], dtype=float)


def neighborhood_mean(cube: Datacube, pixel, kernel: int = 11,
                      bounds: tuple[int, int, int, int] | None = None) -> np.ndarray:
    """Mean over a ``kernel`` x ``kernel`` window, clipped to the frame and to ``bounds``.

    ``bounds`` are half-open (r0, r1, c0, c1), normally the pixel's subimage,
    so windows near a subimage edge never mix interferometers.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be an odd integer >= 1, got {kernel}")
    r, c = _check_pixel(cube, pixel)
    h, w = cube.shape
    half = kernel // 2
    r0, r1, c0, c1 = max(r - half, 0), min(r + half + 1, h), max(c - half, 0), min(c + half + 1, w)
    if bounds is not None:
        r0, r1 = max(r0, bounds[0]), min(r1, bounds[1])
        c0, c1 = max(c0, bounds[2]), min(c1, bounds[3])
    return np.asarray(cube.frames[:, r0:r1, c0:c1], dtype=float).mean(axis=(1, 2))


def flat_field_statistic(cube: Datacube, percentile: float = 90.0,
                         region: tuple[int, int, int, int] | None = None) -> np.ndarray:
    """Nearest-rank percentile of each frame, over the focal plane or a region."""
    if not 0 < percentile <= 100:
        raise ValueError("percentile must lie in (0, 100]")
    frames = cube.frames
    if region is not None:
        frames = frames[:, region[0]:region[1], region[2]:region[3]]
    flat = np.asarray(frames, dtype=float).reshape(frames.shape[0], -1)
    if flat.shape[1] == 0:
        raise ValueError("cannot take a percentile of an empty frame")
    # inverted_cdf is the nearest-rank order statistic
    return np.percentile(flat, percentile, axis=1, method="inverted_cdf")


def subimage_flat_field(cube: Datacube, layout: DeviceLayout, percentile: float = 90.0) -> np.ndarray:
    """Per-subimage flat-field statistic, shape (N_i, N_a)."""
    return np.stack([flat_field_statistic(cube, percentile, layout.bounds(k))
                     for k in range(layout.n_interferometers)])


def degenerate_statistics(y) -> PixelStatistics:
    """Single-sensor fallback: u = y and w = mean(y)."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty acquisition")
    return PixelStatistics(y, y.copy(), np.full(y.size, y.mean()))


def pixel_statistics(cube: Datacube, layout: DeviceLayout, pixel, flat_field: np.ndarray,
                     kernel: int = 11) -> PixelStatistics:
    k = layout.interferometer_at(pixel)
    if k is None:
        raise IndexError(f"pixel {pixel} is not inside any subimage")
    return PixelStatistics(raw_series(cube, pixel),
                           neighborhood_mean(cube, pixel, kernel, layout.bounds(k)),
                           flat_field, tuple(int(v) for v in pixel), k)
