"""Deterministic virtual-time simulator for hierarchical ring-based federated learning."""
from .config import ConfigError, ExperimentConfig, ProtocolKind, parse_config, serialize_config
from .engine import (
    ExperimentResult,
    Simulation,
    aggregate_time_weighted,
    aggregate_uniform,
    lemma51_diagnostic,
    run_experiment,
)
from .metrics import NOT_REACHED, RoundRecord, TransferEvent, count_units, eval_accuracy, rounds_to_target

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "NOT_REACHED",
    "ProtocolKind",
    "RoundRecord",
    "Simulation",
    "TransferEvent",
    "aggregate_time_weighted",
    "aggregate_uniform",
    "count_units",
    "eval_accuracy",
    "lemma51_diagnostic",
    "parse_config",
    "rounds_to_target",
    "run_experiment",
    "serialize_config",
]
