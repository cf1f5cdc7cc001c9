"""Simulated device population: speeds, shards and per-round participation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# stream tags keep independent uses of one experiment seed from colliding
STREAM_PROFILES = 1
STREAM_PARTICIPATION = 2
STREAM_BATCHES = 3
STREAM_RING = 4
STREAM_DATA = 5


def rng_for(seed: int, stream: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, *keys])


@dataclass(frozen=True)
class DeviceProfile:
    id: int
    t_local: float
    shard: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64), repr=False)

    def __post_init__(self):
        if not self.t_local > 0:
            raise ValueError(f"device {self.id}: t_local must be positive")


@dataclass
class DeviceState:
    """What one device holds during a ring round.

    ``buffer`` holds incoming payloads; only the newest is ever trained.
    """

    buffer: list = field(default_factory=list)
    current_model: object = None
    visited_by: set[int] = field(default_factory=set)
    budget_remaining: float = 0.0


def gen_profiles(
    num_devices: int,
    heterogeneity_H: float,
    seed: int,
    shards: list[np.ndarray] | None = None,
    base: float = 1.0,
) -> list[DeviceProfile]:
    """Local-training times uniform on [base, base*H], with both endpoints forced to occur."""
    if num_devices < 1:
        raise ValueError("num_devices must be at least 1")
    if heterogeneity_H < 1:
        raise ValueError(f"heterogeneity H must be >= 1, got {heterogeneity_H}")
    if shards is not None and len(shards) != num_devices:
        raise ValueError("need exactly one shard per device")
    rng = rng_for(seed, STREAM_PROFILES)
    t = rng.uniform(base, base * heterogeneity_H, size=num_devices)
    if num_devices >= 2:
        lo, hi = rng.choice(num_devices, size=2, replace=False)
        t[lo] = base
        t[hi] = base * heterogeneity_H
    else:
        t[0] = base
    return [
        DeviceProfile(i, float(t[i]), shards[i] if shards is not None else np.empty(0, dtype=np.int64))
        for i in range(num_devices)
    ]


def participant_count(num_devices: int, fraction: float) -> int:
    if not 0 < fraction <= 1:
        raise ValueError(f"participation fraction must lie in (0, 1], got {fraction}")
    k = int(np.floor(fraction * num_devices + 0.5))
    if k < 1:
        raise ValueError(f"fraction {fraction} of {num_devices} devices selects nobody")
    return k


def sample_participants(
    profiles: list[DeviceProfile], fraction: float, seed: int, round: int
) -> list[int]:
    """Sorted ids of this round's participants, drawn without replacement."""
    k = participant_count(len(profiles), fraction)
    ids = [p.id for p in profiles]
    if k == len(ids):
        return ids
    chosen = rng_for(seed, STREAM_PARTICIPATION, round).choice(len(ids), size=k, replace=False)
    return sorted(ids[i] for i in chosen)
