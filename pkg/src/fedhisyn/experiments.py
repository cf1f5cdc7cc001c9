"""Seed-averaged sweeps behind the figure and table reproductions."""
from __future__ import annotations

from dataclasses import dataclass, field

from .config import ExperimentConfig, ProtocolKind
from .data import Dataset
from .engine import ExperimentResult, build_datasets, run_experiment
from .metrics import count_units, units_to_target


@dataclass
class SweepPoint:
    value: float
    protocol: str
    accuracies: list[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return sum(self.accuracies) / len(self.accuracies)


def _run(config: ExperimentConfig, cache: dict) -> ExperimentResult:
    # datasets depend only on the data fields and seed, so reuse them across a sweep
    key = (config.dataset, config.dataset_dir, config.mnist_subset, config.synth_samples,
           config.synth_test_samples, config.synth_dim, config.synth_classes,
           config.synth_separation, config.seed)
    if key not in cache:
        cache[key] = build_datasets(config)
    train, test = cache[key]
    return run_experiment(config, train, test)


def sweep(base: ExperimentConfig, field_name: str, values, protocols, seeds) -> list[SweepPoint]:
    """Final test accuracy for every (protocol, value) pair, one entry per seed."""
    cache: dict[tuple, tuple[Dataset, Dataset]] = {}
    points = []
    for proto in protocols:
        for v in values:
            point = SweepPoint(v, proto)
            for seed in seeds:
                cfg = base.replace(protocol=ProtocolKind(proto), seed=seed, **{field_name: v})
                point.accuracies.append(_run(cfg, cache).records[-1].test_accuracy)
            points.append(point)
    return points


def trend_ok(means: list[float], direction: str, noise: float) -> bool:
    """Check that successive means move in ``direction`` up to ``noise``."""
    sign = 1 if direction == "up" else -1
    return all(sign * (b - a) >= -noise for a, b in zip(means, means[1:]))


@dataclass
class TableEntry:
    protocol: str
    final_accuracy: float
    server_units_to_target: int | None
    fedavg_rounds: float | None  # units to target over one FedAvg round (2|S| units)
    server_units: int
    d2d_units: int


def table_row(base: ExperimentConfig, protocols, participants: int) -> list[TableEntry]:
    cache: dict = {}
    rows = []
    for proto in protocols:
        res = _run(base.replace(protocol=ProtocolKind(proto)), cache)
        units = units_to_target(res.records, base.target_accuracy)
        counts = count_units(res.events)
        rows.append(TableEntry(
            proto, res.records[-1].test_accuracy, units,
            None if units is None else units / (2 * participants),
            counts.server_units, counts.d2d_units,
        ))
    return rows
