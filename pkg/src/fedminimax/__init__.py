"""Simulator for federated minimax optimisation with local updates."""

__version__ = "0.1.0"

from .core import ConfigError, StepSchedule, SyncSchedule, schedule_from_theorem  # noqa: E402
from .problems import HeterogeneityProfile, load_problem, make_quadratic  # noqa: E402
from .algorithms import (AlgorithmConfig, run_local_sgd, run_local_sgda,  # noqa: E402
                         run_local_sgda_plus, run_momentum_local_sgda,
                         run_momentum_local_sgda_plus)

__all__ = [
    "ConfigError", "StepSchedule", "SyncSchedule", "schedule_from_theorem",
    "HeterogeneityProfile", "load_problem", "make_quadratic", "AlgorithmConfig",
    "run_local_sgd", "run_local_sgda", "run_local_sgda_plus", "run_momentum_local_sgda",
    "run_momentum_local_sgda_plus",
]
