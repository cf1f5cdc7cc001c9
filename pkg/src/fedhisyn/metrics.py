"""Accuracy, communication accounting and result files."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import Dataset
from .nn_core import ModelSpec, forward

SERVER = "server"
NOT_REACHED = None  # rendered as "X" in reports

CSV_COLUMNS = ("round", "virtual_time", "server_units", "d2d_units", "test_acc", "train_loss")


@dataclass(frozen=True)
class TransferEvent:
    virtual_time: float
    source: int | str
    dest: int | str
    payload_units: int
    round: int

    @property
    def touches_server(self) -> bool:
        return self.source == SERVER or self.dest == SERVER

    def to_json(self) -> str:
        return json.dumps(
            {"t": self.virtual_time, "src": self.source, "dst": self.dest,
             "units": self.payload_units, "round": self.round}
        )


@dataclass(frozen=True)
class RoundRecord:
    round: int
    virtual_time: float
    server_model_units: int
    d2d_model_units: int
    test_accuracy: float
    train_loss: float

    def csv_row(self) -> list:
        return [self.round, self.virtual_time, self.server_model_units,
                self.d2d_model_units, self.test_accuracy, self.train_loss]


@dataclass(frozen=True)
class UnitCounts:
    server_units: int
    d2d_units: int
    rounds: int

    @property
    def server_units_per_round(self) -> float:
        return self.server_units / self.rounds if self.rounds else 0.0


def eval_accuracy(spec: ModelSpec, params: np.ndarray, test: Dataset, chunk: int = 4096) -> float:
    """Fraction of rows whose argmax prediction (lowest class id on ties) equals the label."""
    correct = 0
    for start in range(0, len(test), chunk):
        probs = forward(spec, params, test.features[start : start + chunk])
        correct += int(np.sum(np.argmax(probs, axis=1) == test.labels[start : start + chunk]))
    return correct / len(test)


def count_units(events: Iterable[TransferEvent]) -> UnitCounts:
    server = d2d = 0
    rounds = set()
    for e in events:
        rounds.add(e.round)
        if e.touches_server:
            server += e.payload_units
        else:
            d2d += e.payload_units
    return UnitCounts(server, d2d, len(rounds))


def rounds_to_target(records: list[RoundRecord], target_accuracy: float) -> int | None:
    if not records:
        raise ValueError("no round records")
    for r in records:
        if r.test_accuracy >= target_accuracy:
            return r.round
    return NOT_REACHED


def units_to_target(records: list[RoundRecord], target_accuracy: float) -> int | None:
    r = rounds_to_target(records, target_accuracy)
    return NOT_REACHED if r is NOT_REACHED else records[r - 1].server_model_units


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def write_csv(records: list[RoundRecord], path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow(r.csv_row())
    _atomic_write(Path(path), buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_json(obj, path) -> None:
    _atomic_write(Path(path), json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_events(events: Iterable[TransferEvent], path) -> None:
    _atomic_write(Path(path), "".join(e.to_json() + "\n" for e in events))


def record_dicts(records: list[RoundRecord]) -> list[dict]:
    return [asdict(r) for r in records]
