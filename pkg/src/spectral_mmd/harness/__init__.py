from .config import ConfigError, Experiment, ExperimentConfig, Method
from .experiments import (
    PowerResult,
    effective_parameters,
    emit_results,
    oracle_check,
    run_experiment,
    run_file_test,
)

__all__ = [
    "ConfigError",
    "Experiment",
    "ExperimentConfig",
    "Method",
    "PowerResult",
    "effective_parameters",
    "emit_results",
    "oracle_check",
    "run_experiment",
    "run_file_test",
]
