"""Spectral simulation and statistical checks for the stochastic Burgers equation on the torus."""

from .errors import (DivergenceError, LabError, ParameterError, PositivityError, RangeError,
                     StatisticsError, UndefinedExponentError)
from .harness import ExperimentConfig, load_config, replica_generator, replica_map, run_experiment
from .report import StatReport, Statistic
from .spde import SPDEConfig, Trajectory, simulate
from .torus_field import Mollifier, SpectralField, renorm_constant, sample_white_noise

__all__ = [
    "DivergenceError", "ExperimentConfig", "LabError", "Mollifier", "ParameterError", "PositivityError",
    "RangeError", "SPDEConfig", "SpectralField", "StatReport", "Statistic", "StatisticsError", "Trajectory",
    "UndefinedExponentError", "load_config", "renorm_constant", "replica_generator", "replica_map",
    "run_experiment", "sample_white_noise", "simulate",
]
__version__ = "0.1.0"
