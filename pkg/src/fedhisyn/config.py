"""Experiment configuration and its flat ``key = value`` (TOML subset) text form."""
from __future__ import annotations

import dataclasses
import enum
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .topology import RING_ORDERS


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class ProtocolKind(str, enum.Enum):
    FEDHISYN = "fedhisyn"
    FEDAVG = "fedavg"
    TFEDAVG = "tfedavg"
    TAFEDAVG = "tafedavg"
    FEDPROX = "fedprox"
    FEDAT = "fedat"
    SCAFFOLD = "scaffold"


@dataclass
class ExperimentConfig:
    protocol: ProtocolKind = ProtocolKind.FEDHISYN
    # dataset
    dataset: str = "synthetic"  # synthetic | mnist
    dataset_dir: str = "data/mnist10k"
    mnist_subset: int = 0  # 0 keeps every training sample
    synth_samples: int = 2000
    synth_test_samples: int = 1000
    synth_dim: int = 20
    synth_classes: int = 10
    synth_separation: float = 3.0
    # model
    hidden_dims: list[int] = field(default_factory=list)
    l2: float = 0.0
    # partition and population
    partition: str = "dirichlet"  # dirichlet | iid
    beta: float = 0.3
    num_devices: int = 100
    participation: float = 1.0
    H: float = 10.0
    # protocol knobs
    K: int = 10
    ring_order: str = "small_to_large"
    aggregation: str = "eq9"  # eq9 | eq10, ring protocol only
    round_time: float = 0.0  # 0 means the slowest participant's t_local
    mu_prox: float = 0.01
    tafedavg_alpha: float = 0.5
    # optimization
    rounds: int = 100
    lr: float = 0.1
    lr_decay_gamma: float = 0.0  # >0 gives lr * gamma / (gamma + round)
    batch_size: int = 50
    local_epochs: int = 5
    # reporting
    target_accuracy: float = 0.96
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.protocol, ProtocolKind):
            try:
                self.protocol = ProtocolKind(self.protocol)
            except ValueError:
                names = ", ".join(p.value for p in ProtocolKind)
                raise ConfigError("protocol", f"unknown protocol {self.protocol!r} (known: {names})") from None
        self.hidden_dims = [int(h) for h in self.hidden_dims]
        self.validate()

    def validate(self) -> None:
        def need(cond: bool, name: str, msg: str) -> None:
            if not cond:
                raise ConfigError(name, msg)

        need(self.dataset in ("synthetic", "mnist"), "dataset", f"unknown dataset {self.dataset!r}")
        need(self.partition in ("dirichlet", "iid"), "partition", f"unknown partition {self.partition!r}")
        need(self.aggregation in ("eq9", "eq10"), "aggregation", f"unknown rule {self.aggregation!r}")
        need(self.ring_order in RING_ORDERS, "ring_order", f"unknown ring order {self.ring_order!r}")
        need(self.mnist_subset >= 0, "mnist_subset", "must be >= 0")
        need(self.synth_samples >= self.synth_classes, "synth_samples", "must be >= synth_classes")
        need(self.synth_test_samples >= 1, "synth_test_samples", "must be >= 1")
        need(self.synth_dim >= 1, "synth_dim", "must be >= 1")
        need(self.synth_classes >= 2, "synth_classes", "must be >= 2")
        need(self.synth_separation >= 0, "synth_separation", "must be >= 0")
        need(all(h >= 1 for h in self.hidden_dims), "hidden_dims", "layer widths must be positive")
        need(self.l2 >= 0, "l2", "must be >= 0")
        need(self.beta > 0, "beta", "must be > 0")
        need(self.num_devices >= 1, "num_devices", "must be >= 1")
        need(0 < self.participation <= 1, "participation", "must lie in (0, 1]")
        need(self.participation * self.num_devices >= 0.5, "participation", "selects no device")
        need(self.H >= 1, "H", "must be >= 1")
        need(1 <= self.K <= self.num_devices, "K", f"must lie in [1, num_devices={self.num_devices}]")
        need(self.round_time >= 0, "round_time", "must be >= 0")
        need(self.mu_prox >= 0, "mu_prox", "must be >= 0")
        need(0 < self.tafedavg_alpha <= 1, "tafedavg_alpha", "must lie in (0, 1]")
        need(self.rounds >= 1, "rounds", "must be >= 1")
        need(self.lr > 0 and math.isfinite(self.lr), "lr", "must be a positive finite number")
        need(self.lr_decay_gamma >= 0, "lr_decay_gamma", "must be >= 0")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.local_epochs >= 1, "local_epochs", "must be >= 1")
        need(0 <= self.target_accuracy, "target_accuracy", "must be >= 0")

    def lr_at(self, round_index: int) -> float:
        """Learning rate for 0-based ``round_index``."""
        if self.lr_decay_gamma:
            return self.lr * self.lr_decay_gamma / (self.lr_decay_gamma + round_index)
        return self.lr

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["protocol"] = self.protocol.value
        return out

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in fields:
                raise ConfigError(key, "unknown configuration key")
            kwargs[key] = _coerce(key, fields[key].default, fields[key], value)
        return cls(**kwargs)


def _coerce(key: str, default, f: dataclasses.Field, value):
    if f.name == "protocol":
        return value
    if f.name == "hidden_dims":
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(key, f"expected a list of integers, got {value!r}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    return value


def parse_config(text: str) -> ExperimentConfig:
    try:
        values = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"malformed config text: {exc}") from None
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(nested[0], "tables are not supported; use flat key = value lines")
    return ExperimentConfig.from_dict(values)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, list):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    return str(value)


def serialize_config(config: ExperimentConfig) -> str:
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in config.to_dict().items())


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)
