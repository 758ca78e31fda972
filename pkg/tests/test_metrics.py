import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irca.estimator import IrcaConfig, PixelResult, characterize_device
from irca.metrics import fit_report, fit_rmse, opd_step_report, parameter_maps, radial_profile
from irca.model import WaveRegime
from irca.simulator import DeviceLayout, make_truth, simulate_datacube


def test_rmse_examples():
    y = np.array([1.0, 2.0, 3.0])
    assert fit_rmse(y, y) == 0.0
    assert fit_rmse(y, y + y.mean()) == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=2, max_size=20), st.floats(1e-3, 1e3))
def test_rmse_scale_invariance(values, c):
    y = np.array(values)
    t = y[::-1] + 0.1
    assert fit_rmse(c * y, c * t) == pytest.approx(fit_rmse(y, t), rel=1e-9)


def test_rmse_errors():
    with pytest.raises(ValueError):
        fit_rmse([1.0, -1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        fit_rmse([1.0], [1.0, 2.0])


class _Result:
    def __init__(self, rmse, converged, opd=1e-3):
        self.rmse = rmse
        self.converged = converged
        self.params = type("P", (), {"opd": opd})()


def _pixel(k, rmse, converged=True, opd=1e-3):
    return PixelResult(k, (0, k), _Result(rmse, converged, opd))


def test_fit_report_excludes_non_converged():
    pixels = [_pixel(0, 0.1), _pixel(1, 0.3), _pixel(2, 5.0, converged=False),
              PixelResult(3, (0, 3), None, "ValueError: x")]
    report = fit_report(pixels, "ml", "infinite")
    assert report.mean == pytest.approx(0.2)
    assert report.std == pytest.approx(0.1)
    assert report.n_not_converged == 2
    assert "2/4 converged" in report.summary_line()
    assert report.summary()["n_fits"] == 4


def test_fit_report_empty():
    report = fit_report([], "es", "two")
    assert math.isnan(report.mean) and report.n_not_converged == 0


def test_opd_steps_perfect_staircase():
    layout = DeviceLayout(5, 200.0, 4000.0, focal_shape=(8, 40), subimage_shape=(8, 8))
    opds = {k: layout.nominal_opd(k) for k in range(5)}
    report = opd_step_report(opds, layout)
    assert report.steps.size == 4 and report.opd.size == 5
    assert np.allclose(report.deviation, 0.0, atol=1e-18)
    assert report.steps.sum() == pytest.approx(report.opd[-1] - report.opd[0], rel=1e-15)
    rows = report.rows()
    assert rows[0]["from"] == 0 and rows[-1]["to"] == 4


def test_opd_steps_two_interferometers():
    layout = DeviceLayout(2, 100.0, 4000.0, focal_shape=(4, 8), subimage_shape=(4, 4))
    assert opd_step_report({0: 1e-3, 1: 1.03e-3}, layout).steps.size == 1


def test_opd_steps_gaps_and_bounds():
    layout = DeviceLayout(3, 100.0, 4000.0, focal_shape=(4, 12), subimage_shape=(4, 4))
    report = opd_step_report({0: 1e-3, 2: 1.04e-3}, layout)
    assert report.missing == [1]
    assert np.all(np.isnan(report.steps))
    with pytest.raises(ValueError):
        opd_step_report({5: 1e-3}, layout)


def test_opd_steps_recover_injected_tilt(band_grid):
    layout = DeviceLayout(10, 200.0, 4000.0, focal_shape=(32, 80), subimage_shape=(16, 16))
    tilt = 2e-6
    truth = make_truth(layout, [1.0, 0.1], [0.15], 0.3, tilt_per_column=tilt)
    cube = simulate_datacube(layout, band_grid, truth, WaveRegime.infinite())
    results = characterize_device(cube, layout, IrcaConfig(degree=1))
    report = opd_step_report(results.pixels, layout)
    # 5 columns per row: within a row each step gains +tilt, the wrap to the next row loses 4 tilt
    expected = np.array([tilt if (k + 1) % 5 else -4 * tilt for k in range(9)])
    assert np.allclose(report.deviation, expected, atol=1e-10)


def _radial_run(band_grid, angle_deg=0.5, size=21):
    layout = DeviceLayout(1, 0.0, 8000.0, focal_shape=(size, size), subimage_shape=(size, size),
                          angular_scale=math.radians(angle_deg))
    truth = make_truth(layout, [1.0, 0.1], [0.2], 0.4)
    cube = simulate_datacube(layout, band_grid, truth, WaveRegime.infinite())
    return layout, characterize_device(cube, layout, IrcaConfig(degree=1), pixels="all", kernel=3)


def test_maps_uniform_angle_is_zero(band_grid):
    layout, results = _radial_run(band_grid, angle_deg=0.0, size=9)
    maps = parameter_maps(results.pixels, layout, results.grid)
    assert np.allclose(maps.relative_opd, 0.0, atol=1e-12)
    assert np.allclose(maps.mean_reflectivity, 0.2, atol=1e-9)


def test_maps_radial_structure(band_grid):
    layout, results = _radial_run(band_grid)
    maps = parameter_maps(results.pixels, layout, results.grid)
    assert maps.relative_opd[layout.center_pixel(0)] == 0.0
    radii, means = radial_profile(maps.relative_opd, layout.optical_axis(0))
    assert np.all(np.diff(means) < 0)


def test_maps_mask_non_converged(band_grid):
    layout, results = _radial_run(band_grid, size=9, angle_deg=0.3)
    broken = {(0, 0), (3, 7), (8, 8)}
    pixels = [PixelResult(p.interferometer, p.pixel, None, "injected") if p.pixel in broken else p
              for p in results.pixels]
    maps = parameter_maps(pixels, layout, results.grid)
    assert int(maps.mask.sum()) == len(broken)
    assert len(maps.rows()) == 81 - len(broken)


def test_maps_skip_subimage_without_center(band_grid):
    layout, results = _radial_run(band_grid, size=9, angle_deg=0.3)
    pixels = [p for p in results.pixels if p.pixel != layout.center_pixel(0)]
    maps = parameter_maps(pixels, layout, results.grid)
    assert maps.skipped_subimages == [0] and maps.mask.all()


def test_radial_profile_bins():
    values = np.array([[1.0, 2.0, 1.0], [2.0, 0.0, 2.0], [1.0, 2.0, np.nan]])
    radii, means = radial_profile(values, (1.0, 1.0))
    # diagonals (r = 1.41) round into ring 1; the NaN corner is ignored
    assert list(radii) == [0.0, 1.0]
    assert means == pytest.approx([0.0, 11 / 7])
