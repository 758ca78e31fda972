"""Simulation and characterization of multi-aperture Fabry-Perot imaging spectrometers."""

from .model import (TransmittanceParams, WaveRegime, WavenumberGrid, mean_scale_factor,
                    mean_scaled_transmittance, opd_from_geometry, phase, poly_eval,
                    regime_max_reflectivity, transmittance, transmittance_response)
from .lm import LmConfig, LmProblem, LmReport, lm_solve
from .simulator import (Datacube, DeviceLayout, NoiseModel, build_layout, make_truth,
                        nyquist_check, pixel_opd, simulate_datacube)
from .statistics import (PixelStatistics, degenerate_statistics, equalize_power,
                         flat_field_statistic, neighborhood_mean, raw_series)
from .estimator import (CharacterizationResult, IrcaConfig, characterize_device,
                        characterize_pixel, estimate_gain, refine)
from .metrics import fit_rmse, opd_step_report, parameter_maps

__version__ = "0.1.0"
