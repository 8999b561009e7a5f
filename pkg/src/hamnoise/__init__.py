"""Long-time behaviour of planar Hamiltonian oscillators under decaying
multiplicative noise: averaged drift, regime classification and Monte Carlo
verification."""

from .averaging import AveragedDrift, build_averaged_drift
from .errors import (AmbiguousFitError, ChartDomainError, ConfigError, DegenerateModelError,
                     HamNoiseError, NoNoiseFloorError, NonPeriodicOrbitError, NoRootError,
                     NumericError, RefusedRunError, SequencingError)
from .hamiltonian import HamiltonianModel, OrbitAtlas, build_atlas, build_orbit
from .models import ModelParams, make_model
from .perturbation import PerturbationSeries, noise_floor, validate
from .regime import RegimePrediction, classify, fit_structure, solve_q3, solve_reduced
from .sde import EnsembleReport, SamplePath, SimConfig, run_ensemble, scaled_energy, simulate_path

__all__ = [
    "AmbiguousFitError", "AveragedDrift", "ChartDomainError", "ConfigError", "DegenerateModelError",
    "EnsembleReport", "HamNoiseError", "HamiltonianModel", "ModelParams", "NoNoiseFloorError",
    "NoRootError", "NonPeriodicOrbitError", "NumericError", "OrbitAtlas", "PerturbationSeries",
    "RefusedRunError", "RegimePrediction", "SamplePath", "SequencingError", "SimConfig",
    "build_atlas", "build_averaged_drift", "build_orbit", "classify", "fit_structure",
    "make_model", "noise_floor", "run_ensemble", "scaled_energy", "simulate_path", "solve_q3",
    "solve_reduced", "validate",
]

__version__ = "0.1.0"
