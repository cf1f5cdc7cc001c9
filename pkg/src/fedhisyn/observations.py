"""Server-free experiments on how device-to-device passing affects device models.

``communication_experiment`` covers the homogeneous five-way comparison (no
communication, random passing, ring passing, each optionally averaging the
received model into the local one). ``ring_without_server`` runs the
heterogeneous ring machinery of the simulator with the aggregation step removed,
which is what the ordering and cluster-count comparisons need.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .devices import STREAM_RING, rng_for
from .engine import Simulation
from .metrics import eval_accuracy

MODES = ("none", "random_avg", "random", "ring_avg", "ring")


@dataclass
class DeviceAccuracy:
    per_round: list[float]  # mean device-model test accuracy after each round
    final_per_device: dict[int, float]

    @property
    def final_mean(self) -> float:
        return self.per_round[-1]


def communication_experiment(config: ExperimentConfig, mode: str) -> DeviceAccuracy:
    """Every device trains once per round, then passes its model per ``mode``.

    Device speeds play no role here; ``config.H`` is ignored.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    sim = Simulation(config.replace(H=1.0))
    devices = list(range(config.num_devices))
    held = {i: sim.initial_model for i in devices}
    per_round = []
    for r in range(config.rounds):
        lr = config.lr_at(r)
        trained = {i: sim.trainer.train(held[i], i, r, 0, lr).params for i in devices}
        if mode == "none":
            held = trained
        else:
            if mode.startswith("ring"):
                dest = {i: (i + 1) % len(devices) for i in devices}
            else:
                perm = rng_for(config.seed, STREAM_RING, r).permutation(len(devices))
                dest = {i: int(perm[i]) for i in devices}
            received = {dest[i]: trained[i] for i in devices}
            if mode.endswith("_avg"):
                held = {i: 0.5 * (trained[i] + received[i]) for i in devices}
            else:
                held = received
        accs = {i: eval_accuracy(sim.spec, held[i], sim.test_set) for i in devices}
        per_round.append(float(np.mean(list(accs.values()))))
    return DeviceAccuracy(per_round, accs)


def ring_without_server(config: ExperimentConfig, fastest_class_only: bool = False) -> DeviceAccuracy:
    """Heterogeneous ring passing with the server removed.

    Each round reclusters and reorders per ``config.K`` / ``config.ring_order``;
    devices start the next round from the newest model they hold. With
    ``fastest_class_only`` the reported mean covers the fastest speed class.
    """
    sim = Simulation(config)
    held = {p.id: sim.initial_model for p in sim.profiles}
    per_round = []
    for r in range(config.rounds):
        participants = sorted(held)
        clustering = sim.clustering_for(participants)
        topology = sim.topology_for(clustering, participants, r)
        result = sim.fedhisyn_round(held, topology, sim.round_time(participants), r, config.lr_at(r))
        sim.clock += result.duration
        held = {i: p.params for i, p in result.held.items()}
        scope = clustering.members(0) if fastest_class_only else participants
        accs = {i: eval_accuracy(sim.spec, held[i], sim.test_set) for i in scope}
        per_round.append(float(np.mean(list(accs.values()))))
    return DeviceAccuracy(per_round, accs)
