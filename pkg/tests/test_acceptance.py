"""Acceptance criteria, each at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py``; the terminal summary lists
one PASS/FAIL line per criterion.
"""

import gc
import math
import time

import numpy as np
import pytest

from irca.estimator import (IrcaConfig, ResponseFit, characterize_device, default_opd_interval,
                            estimate_gain, fringe_contrast_series, ml_reflectivity, periodogram_opd)
from irca.lm import LmConfig, LmProblem, lm_solve, numeric_jacobian
from irca.metrics import parameter_maps, radial_profile
from irca.model import (TransmittanceParams, WaveRegime, WavenumberGrid, mean_scaled_transmittance,
                        poly_eval, regime_max_difference, regime_max_reflectivity,
                        transmittance_response)
from irca.simulator import DeviceLayout, NoiseModel, make_truth, nyquist_check, simulate_datacube

BAND_GRID = WavenumberGrid.regular(6250.0, 10000.0, 343)


def _full_plane_run(noise: NoiseModel, seed: int) -> dict:
    """Simulate the 80-interferometer focal plane and characterize the central pixels."""
    layout = DeviceLayout(80, 200.0, 4000.0)
    phases = np.random.default_rng(seed).uniform(-np.pi, np.pi, 80)
    truth = make_truth(layout, [1.0, 0.15, -0.05], [0.13], phases)
    start = time.perf_counter()
    cube = simulate_datacube(layout, BAND_GRID, truth, WaveRegime.infinite(), noise, seed=seed)
    results = characterize_device(cube, layout, IrcaConfig(degree=2), jobs=1)
    elapsed = time.perf_counter() - start
    del cube
    gc.collect()
    ok = [p for p in results if p.result is not None]
    return {
        "elapsed": elapsed,
        "n": len(results),
        "n_ok": len(ok),
        "opd_error": np.array([abs(p.result.params.opd - truth[p.interferometer].opd) / truth[p.interferometer].opd
                               for p in ok]),
        "rmse": np.array([p.result.rmse for p in ok]),
        "histories": [p.result.report.cost_history for p in ok],
    }


@pytest.fixture(scope="module")
def noiseless_run():
    return _full_plane_run(NoiseModel.none(), seed=11)


@pytest.fixture(scope="module")
def noisy_run():
    return _full_plane_run(NoiseModel.gaussian(0.05), seed=12)


@pytest.fixture(scope="module")
def map_run():
    layout = DeviceLayout(1, 0.0, 8000.0, focal_shape=(21, 21), subimage_shape=(21, 21),
                          angular_scale=math.radians(0.5))
    truth = make_truth(layout, [1.0, 0.1, -0.05], [0.2], 0.7)
    cube = simulate_datacube(layout, BAND_GRID, truth, WaveRegime.infinite())
    results = characterize_device(cube, layout, IrcaConfig(degree=2), pixels="all")
    return layout, results


def test_c1_noiseless_round_trip(noiseless_run, acceptance):
    run = noiseless_run
    worst_opd = run["opd_error"].max() if run["n_ok"] else math.inf
    worst_rmse = run["rmse"].max() if run["n_ok"] else math.inf
    passed = (run["n_ok"] == run["n"] == 80 and worst_opd < 1e-5 and worst_rmse < 1e-6
              and run["elapsed"] < 120.0)
    acceptance(1, "noiseless 80-aperture round-trip", passed,
               f"max rel OPD error {worst_opd:.2e}, max RMSE {worst_rmse:.2e}, {run['elapsed']:.1f} s")
    assert passed


def test_c2_periodogram_bin_accuracy(acceptance):
    rng = np.random.default_rng(2024)
    grid = BAND_GRID
    bin_width = grid.opd_resolution
    interval = default_opd_interval(grid)
    hits = 0
    draws = 1000
    for _ in range(draws):
        opd = rng.uniform(interval[0] + 5 * bin_width, interval[1] - 5 * bin_width)
        gain = np.array([rng.uniform(0.5, 2.0), rng.uniform(-0.2, 0.2), rng.uniform(-0.1, 0.1)])
        params = TransmittanceParams(gain, [rng.uniform(0.02, 0.6), 0.0, 0.0], opd, rng.uniform(-np.pi, np.pi))
        y = transmittance_response(params, grid.sigma, WaveRegime.two(), grid)
        # ideal flat field: the gain curve itself
        g_hat = estimate_gain(poly_eval(gain, grid.sigma, grid), grid, 2)
        v = fringe_contrast_series(y, g_hat, grid)
        peak = periodogram_opd(v, grid, interval)
        hits += abs(peak.opd - opd) <= bin_width
    rate = hits / draws
    passed = rate >= 0.99
    acceptance(2, "periodogram within one base bin", passed, f"{hits}/{draws} = {rate:.1%}")
    assert passed


def test_c3_noisy_recovery(noisy_run, acceptance):
    run = noisy_run
    med_opd = float(np.median(run["opd_error"]))
    med_rmse = float(np.median(run["rmse"]))
    passed = run["n_ok"] == 80 and med_opd < 1e-3 and med_rmse <= 2 * 0.05
    acceptance(3, "noisy 80-aperture recovery (5% noise)", passed,
               f"median rel OPD error {med_opd:.2e}, median RMSE {med_rmse:.4f} (limit 0.10)")
    assert passed


def test_c4_mean_scaling(acceptance):
    rng = np.random.default_rng(44)
    phi = 2 * np.pi * np.arange(8192) / 8192
    worst = 0.0
    for _ in range(100):
        r = rng.uniform(0.0, 0.9)
        w = int(rng.integers(2, 32))      # 31 stands for the Airy limit
        regime = WaveRegime.infinite() if w == 31 else WaveRegime.finite(w)
        worst = max(worst, abs(np.mean(mean_scaled_transmittance(r, phi, regime)) - 1.0))
    passed = worst < 1e-9
    acceptance(4, "mean-scaled phase average is 1", passed, f"max deviation {worst:.1e}")
    assert passed


def test_c5_regime_convergence(acceptance):
    gaps = [regime_max_difference(0.3, WaveRegime.finite(w)) for w in (2, 5, 10, 20)]
    waves = [2, 3, 5, 10, 20, 30]
    limits = [regime_max_reflectivity(WaveRegime.finite(w), 0.01) for w in waves]
    decreasing = all(b < a for a, b in zip(gaps, gaps[1:]))
    passed = decreasing and gaps[-1] < 1e-3 and all(b >= a for a, b in zip(limits, limits[1:]))
    acceptance(5, "regime convergence", passed,
               "sup gaps " + ", ".join(f"{g:.1e}" for g in gaps)
               + "; max R " + ", ".join(f"{r:.3f}" for r in limits))
    assert passed


def test_c6_solver(noiseless_run, noisy_run, map_run, acceptance):
    rng = np.random.default_rng(66)
    # analytic versus numeric Jacobian of the response fit
    jac_err = 0.0
    for regime in (WaveRegime.two(), WaveRegime.finite(7), WaveRegime.infinite()):
        for _ in range(5):
            fit = ResponseFit(np.ones(BAND_GRID.size), BAND_GRID, regime, 2)
            params = TransmittanceParams(rng.uniform(0.5, 1.5, 3), [rng.uniform(0.05, 0.6), 0.02, -0.01],
                                         rng.uniform(2e-4, 5e-3), rng.uniform(-np.pi, np.pi))
            x = fit.pack(params)
            analytic, numeric = fit.jacobian(x), numeric_jacobian(fit.residual, x)
            jac_err = max(jac_err, np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric))
    # linear least squares in one undamped step
    ls_err = 0.0
    for _ in range(20):
        a = rng.normal(size=(30, 6))
        b = rng.normal(size=30)
        problem = LmProblem(lambda x, a=a, b=b: a @ x - b, 6, lambda x, a=a: a)
        report = lm_solve(problem, rng.normal(size=6), LmConfig(initial_damping=0.0, max_iterations=1))
        exact = np.linalg.lstsq(a, b, rcond=None)[0]
        ls_err = max(ls_err, np.max(np.abs(report.params - exact)) / max(1.0, np.max(np.abs(exact))))
        ls_err = ls_err if report.accepted_steps == 1 else math.inf
    histories = noiseless_run["histories"] + noisy_run["histories"]
    histories += [p.result.report.cost_history for p in map_run[1] if p.result is not None]
    monotone = all(np.all(np.diff(h) <= 0) for h in histories)
    passed = jac_err < 1e-5 and ls_err < 1e-8 and monotone
    acceptance(6, "solver correctness", passed,
               f"Jacobian rel error {jac_err:.1e}, one-step LS error {ls_err:.1e}, "
               f"{len(histories)} cost histories monotone: {monotone}")
    assert passed


def test_c7_reflectivity_inversion(acceptance):
    alphas = np.round(np.arange(1, 100) / 100, 2)
    identity = max(abs(2 * r / (1 + r * r) - a) for a in alphas for r in [ml_reflectivity(a)])
    paper_exact = all(ml_reflectivity(a, paper=True) == 1 - math.sqrt(1 - a * a) for a in alphas)
    passed = identity < 1e-12 and paper_exact
    acceptance(7, "reflectivity inversion", passed,
               f"max identity error {identity:.1e}, compatibility mode exact: {paper_exact}")
    assert passed


def test_c8_nyquist(acceptance):
    layout = DeviceLayout(216, 100.0, 0.0, focal_shape=(512, 640), subimage_shape=(32, 32))
    grid = WavenumberGrid.regular(5000.0, 5000.0 + 100.0 * 100, 100)
    check = nyquist_check(layout, grid)
    passed = check["pass"] and 1.1 < check["margin"] < 1.2
    acceptance(8, "216-aperture Nyquist margin", passed, f"margin {check['margin']:.4f}")
    assert passed


def test_c9_map_structure(map_run, acceptance):
    layout, results = map_run
    maps = parameter_maps(results.pixels, layout, results.grid)
    center = maps.relative_opd[layout.center_pixel(0)]
    radii, means = radial_profile(maps.relative_opd, layout.optical_axis(0))
    decreasing = bool(np.all(np.diff(means) < 0))
    passed = center == 0.0 and decreasing and not maps.mask.any()
    acceptance(9, "radial relative-OPD map", passed,
               f"axis value {center}, {radii.size} radial bins strictly decreasing: {decreasing}, "
               f"masked {int(maps.mask.sum())}")
    assert passed


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
