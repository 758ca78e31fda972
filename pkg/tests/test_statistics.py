import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irca.model import WaveRegime, WavenumberGrid
from irca.simulator import Datacube, DeviceLayout, NoiseModel, make_truth, simulate_datacube
from irca.statistics import (PixelStatistics, degenerate_statistics, equalize_power, flat_field_statistic,
                             neighborhood_mean, pixel_statistics, raw_series, subimage_flat_field)

from . import oracles


def cube_of(frames, power=None):
    frames = np.asarray(frames, dtype=float)
    grid = WavenumberGrid(np.arange(1.0, frames.shape[0] + 1))
    return Datacube(grid, frames, np.ones(frames.shape[0]) if power is None else power)


def test_equalize_identity_and_scaling():
    frames = np.random.default_rng(0).uniform(1, 2, (3, 4, 5))
    assert equalize_power(cube_of(frames)).frames is not None
    assert np.array_equal(equalize_power(cube_of(frames)).frames, frames)
    halved = equalize_power(cube_of(frames, np.full(3, 2.0)))
    assert np.allclose(halved.frames, frames / 2)
    assert np.all(halved.incident_power == 1.0)


def test_equalize_preserves_within_frame_ratios():
    frames = np.random.default_rng(1).uniform(1, 2, (3, 4, 5))
    out = equalize_power(cube_of(frames, np.array([0.5, 2.0, 3.0]))).frames
    assert np.allclose(out / out[:, :1, :1], frames / frames[:, :1, :1])


def test_raw_series_examples():
    cube = cube_of(np.full((3, 4, 4), 7.0))
    assert np.array_equal(raw_series(cube, (1, 2)), np.full(3, 7.0))
    with pytest.raises(IndexError):
        raw_series(cube, (4, 0))


def test_neighborhood_examples():
    frames = np.random.default_rng(2).normal(size=(2, 9, 9))
    cube = cube_of(frames)
    assert np.array_equal(neighborhood_mean(cube, (4, 4), 1), raw_series(cube, (4, 4)))
    uniform = cube_of(np.full((2, 9, 9), 3.5))
    for kernel in (1, 3, 11):
        assert np.allclose(neighborhood_mean(uniform, (0, 8), kernel), 3.5)
    # window clipped to the frame: the 2x2 corner block for kernel 3
    assert np.allclose(neighborhood_mean(cube, (0, 0), 3), frames[:, :2, :2].mean(axis=(1, 2)))


def test_neighborhood_respects_bounds():
    frames = np.zeros((1, 4, 8))
    frames[:, :, 4:] = 100.0
    cube = cube_of(frames)
    inside = neighborhood_mean(cube, (2, 3), 5, bounds=(0, 4, 0, 4))
    assert inside[0] == 0.0
    assert neighborhood_mean(cube, (2, 3), 5)[0] > 0


def test_neighborhood_rejects_even_kernel():
    with pytest.raises(ValueError):
        neighborhood_mean(cube_of(np.ones((1, 3, 3))), (1, 1), 4)


def test_kernel_reduces_noise(band_grid):
    layout = DeviceLayout(1, 0.0, 4000.0, focal_shape=(32, 32), subimage_shape=(32, 32))
    truth = make_truth(layout, [1.0], [0.0])
    cube = simulate_datacube(layout, band_grid, truth, WaveRegime.infinite(), NoiseModel.gaussian(0.05), seed=0)
    raw = np.std(raw_series(cube, (16, 16)) - 1.0)
    smooth = np.std(neighborhood_mean(cube, (16, 16), 11) - 1.0)
    assert smooth < raw / 5      # ideal factor is 11


def test_flat_field_examples():
    uniform = cube_of(np.full((2, 3, 3), 4.0))
    assert np.allclose(flat_field_statistic(uniform, 37.0), 4.0)
    values = np.random.default_rng(3).permutation(np.arange(1.0, 101.0)).reshape(1, 10, 10)
    assert flat_field_statistic(cube_of(values), 90.0)[0] == 90.0


@settings(max_examples=40, deadline=None)
@given(p=st.floats(0.5, 100.0), seed=st.integers(0, 1000))
def test_flat_field_is_nearest_rank(p, seed):
    frame = np.random.default_rng(seed).normal(size=(1, 7, 9))
    assert flat_field_statistic(cube_of(frame), p)[0] == oracles.nearest_rank(frame, p)


def test_flat_field_monotone_in_percentile():
    frames = np.random.default_rng(4).normal(size=(3, 10, 10))
    cube = cube_of(frames)
    values = np.array([flat_field_statistic(cube, p) for p in np.linspace(1, 100, 25)])
    assert np.all(np.diff(values, axis=0) >= 0)


def test_flat_field_over_fringes_overestimates_gain():
    # one full fringe cycle of 1 + a cos across many pixels
    a = 0.3
    phi = np.linspace(0, 2 * np.pi, 10_000, endpoint=False)
    frame = (1 + a * np.cos(phi)).reshape(1, 100, 100)
    w = flat_field_statistic(cube_of(frame), 90.0)[0]
    assert w == pytest.approx(1 + a * np.cos(0.1 * np.pi), abs=1e-3)
    assert 1.0 < w <= 1 + a


def test_flat_field_region_and_subimages():
    frames = np.zeros((1, 4, 8))
    frames[:, :, 4:] = 5.0
    cube = cube_of(frames)
    assert flat_field_statistic(cube, 90.0, (0, 4, 0, 4))[0] == 0.0
    layout = DeviceLayout(2, 0.0, 0.0, focal_shape=(4, 8), subimage_shape=(4, 4))
    assert np.array_equal(subimage_flat_field(cube, layout, 90.0), [[0.0], [5.0]])


def test_flat_field_rejects_percentile():
    with pytest.raises(ValueError):
        flat_field_statistic(cube_of(np.ones((1, 2, 2))), 0.0)


def test_degenerate_statistics_examples():
    s = degenerate_statistics([2.0, 4.0])
    assert list(s.y) == [2, 4] and list(s.u) == [2, 4] and list(s.w) == [3, 3]
    c = degenerate_statistics([5.0] * 4)
    assert np.array_equal(c.y, c.u) and np.array_equal(c.u, c.w)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_degenerate_mean_preserved(values):
    s = degenerate_statistics(values)
    assert s.w.mean() == pytest.approx(np.mean(values), rel=1e-12, abs=1e-6)


def test_single_acquisition():
    assert degenerate_statistics([3.0]).y.size == 1
    cube = Datacube(WavenumberGrid([7000.0]), np.full((1, 2, 2), 3.0), [1.0])
    assert raw_series(cube, (0, 1)).shape == (1,)


def test_pixel_statistics_validation():
    with pytest.raises(ValueError):
        PixelStatistics(np.ones(3), np.ones(2), np.ones(3))
    with pytest.raises(ValueError):
        PixelStatistics(np.ones(2), np.ones(2), np.array([1.0, np.inf]))


def test_pixel_statistics_noiseless_equals_model(toy_cube, toy_layout):
    w = flat_field_statistic(toy_cube)
    s = pixel_statistics(toy_cube, toy_layout, toy_layout.center_pixel(1), w, 11)
    assert s.interferometer == 1
    assert np.array_equal(s.y, toy_cube.frames[:, 8, 24])
    # zero angular scale: every pixel in the subimage sees the same curve
    assert np.allclose(s.u, s.y, rtol=1e-13)
    with pytest.raises(IndexError):
        pixel_statistics(toy_cube, toy_layout, (20, 0), w)
