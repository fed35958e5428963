"""Reflected inert-drift SDE with gravity and viscosity: simulation,
renewal-cycle estimators and statistical checks."""
__version__ = "0.1.0"

from .model import ModelParams, SystemState, RenewalConfig, derive_renewal_config
from .rng import NoiseSource
from .integrator import StepConfig, Trajectory, simulate, simulate_until
from .stationary import Binning, BinningSet, EmpiricalMeasure, estimate_pi, tv_distance
from .renewal import AbortBudgetError, CycleBatch, collect_cycles
from .config import ConfigError, ExperimentConfig

__all__ = ["ModelParams", "SystemState", "RenewalConfig", "derive_renewal_config",
           "NoiseSource", "StepConfig", "Trajectory", "simulate", "simulate_until",
           "Binning", "BinningSet", "EmpiricalMeasure", "estimate_pi", "tv_distance",
           "AbortBudgetError", "CycleBatch", "collect_cycles", "ConfigError",
           "ExperimentConfig"]
