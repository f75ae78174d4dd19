"""Pulsed twin-beam squeezing from a lossy Kerr microresonator.

Simulation pipeline: classical pump -> Gaussian moments -> two-time
correlators -> temporal-mode (Schmidt) structure -> photon statistics,
plus synthetic time-tag generation and the multi-pair coincidence
correction used to clean measured two-fold histograms.
"""

from .model import (DetectionModel, PumpPulse, ResonatorParams, TimeGrid,
                    analysis_grid, compute_lambda, default_device,
                    default_pulse, from_quality_factors, omega_from_wavelength)
from .pump import PumpTrajectory, energy_mismatch, solve_pump
from .moments import (MomentState, TwoTimeMoment, evolve_moments,
                      two_time_correlators)
from .schmidt import (JointTemporalAmplitude, SchmidtDecomposition, decompose,
                      jta, max_output_squeezing, nepers_to_db,
                      output_squeezing)
from .observables import (CoherenceProfile, ObservableSet, Spectrum,
                          collect_observables, g1_tilde, g2_from_schmidt,
                          n_per_pulse, optimal_detuning, output_flux,
                          single_photon_spectrum)
from .multiphoton import (CorrectionResult, DetectionProbabilities,
                          MCMCConfig, PairNumberModel, PairTimeDistribution,
                          coincidence_model, correct_p1, detection_probs,
                          exhaustive_pn, fit_effective_detection, marginal_pn,
                          permanent, permanent_naive, purity_bound_from_grid,
                          rn_from_schmidt)
from .stats import (EnergyTestResult, energy_distance, fidelity,
                    permutation_test, pvalue_vs_sample_size)
from .events import (CoincidenceHistograms, TimeTagStream, concat_streams,
                     default_port_map, histogram, ingest, synthesize,
                     write_stream)
from .config import RunConfig, load_config, parse_config, resolve_config

__all__ = [
    "DetectionModel", "PumpPulse", "ResonatorParams", "TimeGrid",
    "analysis_grid", "compute_lambda", "default_device", "default_pulse",
    "from_quality_factors", "omega_from_wavelength",
    "PumpTrajectory", "energy_mismatch", "solve_pump",
    "MomentState", "TwoTimeMoment", "evolve_moments", "two_time_correlators",
    "JointTemporalAmplitude", "SchmidtDecomposition", "decompose", "jta",
    "max_output_squeezing", "nepers_to_db", "output_squeezing",
    "CoherenceProfile", "ObservableSet", "Spectrum", "collect_observables",
    "g1_tilde", "g2_from_schmidt", "n_per_pulse", "optimal_detuning",
    "output_flux", "single_photon_spectrum",
    "CorrectionResult", "DetectionProbabilities", "MCMCConfig",
    "PairNumberModel", "PairTimeDistribution", "coincidence_model",
    "correct_p1", "detection_probs", "exhaustive_pn",
    "fit_effective_detection", "marginal_pn", "permanent", "permanent_naive",
    "purity_bound_from_grid", "rn_from_schmidt",
    "EnergyTestResult", "energy_distance", "fidelity", "permutation_test",
    "pvalue_vs_sample_size",
    "CoincidenceHistograms", "TimeTagStream", "concat_streams",
    "default_port_map", "histogram", "ingest", "synthesize", "write_stream",
    "RunConfig", "load_config", "parse_config", "resolve_config",
]

__version__ = "0.1.0"
