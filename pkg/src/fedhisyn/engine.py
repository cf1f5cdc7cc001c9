"""Virtual-time simulator for the ring protocol and its six baselines.

Everything runs on one logical clock. Local trainings are atomic: a model that
arrives while a device is busy waits in the buffer and is only looked at when
the next training starts, at which point older buffered models are dropped.
A training that would finish after the round deadline is never started (its
result would be discarded), except the first one of each device.
"""
from __future__ import annotations

import hashlib
import heapq
import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn_core
from .config import ExperimentConfig, ProtocolKind
from .data import (
    Dataset,
    load_mnist,
    partition_dirichlet,
    partition_iid,
    stratified_subset,
    synth_dataset,
    train_test_split,
)
from .devices import (
    STREAM_BATCHES,
    STREAM_DATA,
    STREAM_RING,
    DeviceProfile,
    DeviceState,
    gen_profiles,
    rng_for,
    sample_participants,
)
from .metrics import SERVER, RoundRecord, TransferEvent, eval_accuracy
from .topology import Clustering, RingTopology, build_rings, cluster_by_speed

log = logging.getLogger(__name__)

# relative slack when comparing accumulated virtual times against a deadline
TIME_EPS = 1e-9


def completions_within(R: float, t: float) -> int:
    """Trainings of length ``t`` that finish by ``R``; the first always counts."""
    return max(1, int(np.floor(R / t * (1 + TIME_EPS))))


# ---------------------------------------------------------------- aggregation


def _weighted_sum(models: list[np.ndarray], coeffs: list[float]) -> np.ndarray:
    out = coeffs[0] * models[0]
    for c, m in zip(coeffs[1:], models[1:]):
        out += c * m
    return out


def _check_models(models: list[np.ndarray]) -> None:
    if not models:
        raise ValueError("cannot aggregate an empty list of models")
    if any(m.shape != models[0].shape for m in models):
        raise ValueError("models differ in length")


def aggregate_uniform(models: list[np.ndarray]) -> np.ndarray:
    _check_models(models)
    n = len(models)
    return _weighted_sum(models, [1.0 / n] * n)


def aggregate_time_weighted(models: list[np.ndarray], class_mean_times: list[float]) -> np.ndarray:
    """Weight each model by the mean training time of its speed class."""
    _check_models(models)
    if len(class_mean_times) != len(models):
        raise ValueError("need one weight per model")
    if any(not l > 0 for l in class_mean_times):
        raise ValueError("class mean times must be positive")
    # dividing by the max first makes equal weights exactly 1.0, hence exactly 1/n after normalizing
    top = max(class_mean_times)
    scaled = [l / top for l in class_mean_times]
    total = sum(scaled)
    return _weighted_sum(models, [s / total for s in scaled])


def aggregate_sample_weighted(models: list[np.ndarray], sample_counts: list[int]) -> np.ndarray:
    """Weights n_i / N with integer counts."""
    _check_models(models)
    total = int(sum(sample_counts))
    return _weighted_sum(models, [int(n) / total for n in sample_counts])


# ----------------------------------------------------------- local training


@dataclass
class LocalRun:
    params: np.ndarray
    steps: int
    max_grad_sq: float = 0.0


class LocalTrainer:
    """Runs E epochs of shuffled minibatch SGD on one device's shard.

    The batch order depends only on (seed, round, device, training index), so
    every protocol sees the same schedule for the same unit of work.
    """

    def __init__(self, spec: nn_core.ModelSpec, train: Dataset, shards: list[np.ndarray],
                 batch_size: int, epochs: int, seed: int):
        self.spec = spec
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.features = [train.features[s] for s in shards]
        self.labels = [train.labels[s] for s in shards]

    def steps_per_training(self, device: int) -> int:
        n = len(self.labels[device])
        return self.epochs * -(-n // self.batch_size)

    def batches(self, device: int, round_index: int, training_index: int):
        x, y = self.features[device], self.labels[device]
        rng = rng_for(self.seed, STREAM_BATCHES, round_index, device, training_index)
        for _ in range(self.epochs):
            order = rng.permutation(len(y))
            for start in range(0, len(y), self.batch_size):
                idx = order[start : start + self.batch_size]
                yield nn_core.Batch(x[idx], y[idx])

    def train(self, params, device, round_index, training_index, lr, *,
              anchor=None, mu_prox=0.0, c_local=None, c_global=None, track=False) -> LocalRun:
        spec = self.spec
        w = params
        steps = 0
        max_sq = 0.0
        for batch in self.batches(device, round_index, training_index):
            if track:
                g = nn_core.grad(spec, w, batch).grad
                max_sq = max(max_sq, float(g @ g))
                w = w - lr * g
            elif c_local is not None:
                w = nn_core.scaffold_step(spec, w, batch, lr, c_local, c_global)
            elif anchor is not None:
                w = nn_core.prox_sgd_step(spec, w, anchor, batch, lr, mu_prox)
            else:
                w = nn_core.sgd_step(spec, w, batch, lr)
            steps += 1
        return LocalRun(w, steps, max_sq)


# ------------------------------------------------------------------ state


@dataclass
class ServerState:
    global_model: np.ndarray
    round: int = 0
    scaffold_control: np.ndarray | None = None
    fedat_tier_models: list[np.ndarray] | None = None
    fedat_update_counts: list[int] | None = None


@dataclass
class Payload:
    """A model in flight around a ring, with its training history for this round."""

    params: np.ndarray
    initial: np.ndarray
    visited_by: frozenset = frozenset()
    steps: int = 0


@dataclass
class EffectiveGradientRecord:
    round: int
    device: int
    omega_size: int
    steps: int
    eff_grad_sq_norm: float
    g_sq_estimate: float

    @property
    def step_bound(self) -> float:
        """Triangle-inequality bound: n steps each of squared norm <= G^2."""
        return self.steps ** 2 * self.g_sq_estimate

    @property
    def paper_bound(self) -> float:
        return (self.omega_size - 1) * self.g_sq_estimate

    @property
    def violation(self) -> bool:
        return self.eff_grad_sq_norm > self.step_bound * (1 + 1e-9) + 1e-300

    @property
    def exceeds_paper_bound(self) -> bool:
        return self.eff_grad_sq_norm > self.paper_bound * (1 + 1e-9)


@dataclass
class RingRoundResult:
    uploads: dict[int, Payload]
    held: dict[int, Payload]
    duration: float
    trainings: dict[int, int]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RoundRecord]
    events: list[TransferEvent]
    server: ServerState
    initial_model: np.ndarray
    diagnostics: list[EffectiveGradientRecord] = field(default_factory=list)
    global_history: list[np.ndarray] = field(default_factory=list)

    @property
    def initial_model_sha256(self) -> str:
        return hashlib.sha256(self.initial_model.tobytes()).hexdigest()


def build_datasets(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if config.dataset == "mnist":
        train = load_mnist(config.dataset_dir, train=True)
        test = load_mnist(config.dataset_dir, train=False)
        if config.mnist_subset:
            train = stratified_subset(train, config.mnist_subset, config.seed)
        return train, test
    full = synth_dataset(
        config.synth_samples + config.synth_test_samples,
        config.synth_dim,
        config.synth_classes,
        config.synth_separation,
        seed=int(rng_for(config.seed, STREAM_DATA).integers(2**31)),
    )
    return train_test_split(full, config.synth_test_samples, seed=config.seed)


# -------------------------------------------------------------- simulation


class Simulation:
    """One experiment instance; not shareable between concurrent runs."""

    def __init__(self, config: ExperimentConfig, train: Dataset | None = None,
                 test: Dataset | None = None, keep_history: bool = False):
        self.config = config
        if train is None or test is None:
            train, test = build_datasets(config)
        if config.num_devices > len(train):
            raise ValueError(f"num_devices={config.num_devices} exceeds {len(train)} training samples")
        self.train_set, self.test_set = train, test
        self.spec = nn_core.ModelSpec(train.input_dim, train.num_classes,
                                      tuple(config.hidden_dims), l2=config.l2)
        if config.partition == "iid":
            self.partition = partition_iid(train, config.num_devices, config.seed)
        else:
            self.partition = partition_dirichlet(train, config.num_devices, config.beta, config.seed)
        self.profiles: list[DeviceProfile] = gen_profiles(
            config.num_devices, config.H, config.seed, self.partition.shards)
        self.trainer = LocalTrainer(self.spec, train, self.partition.shards,
                                    config.batch_size, config.local_epochs, config.seed)
        self.initial_model = nn_core.init_params(self.spec, config.seed)
        self.server = ServerState(self.initial_model.copy())
        self.events: list[TransferEvent] = []
        self.diagnostics: list[EffectiveGradientRecord] = []
        self.clock = 0.0
        self.server_units = 0
        self.d2d_units = 0
        self.g_sq_max = 0.0
        self.device_controls: dict[int, np.ndarray] = {}
        self.keep_history = keep_history
        self.history: list[np.ndarray] = []
        if config.protocol is ProtocolKind.SCAFFOLD:
            self.server.scaffold_control = np.zeros_like(self.initial_model)
        if config.protocol is ProtocolKind.FEDAT:
            self.server.fedat_tier_models = []
            self.server.fedat_update_counts = []

    # -- bookkeeping

    def t(self, device: int) -> float:
        return self.profiles[device].t_local

    def shard_size(self, device: int) -> int:
        return len(self.partition.shards[device])

    def emit(self, rel_time: float, src, dst, units: int, round_index: int) -> None:
        e = TransferEvent(self.clock + rel_time, src, dst, units, round_index + 1)
        self.events.append(e)
        if e.touches_server:
            self.server_units += units
        else:
            self.d2d_units += units

    def round_time(self, participants: list[int]) -> float:
        return self.config.round_time or max(self.t(i) for i in participants)

    def clustering_for(self, participants: list[int]) -> Clustering:
        t_values = {i: self.t(i) for i in participants}
        return cluster_by_speed(t_values, min(self.config.K, len(participants)))

    def topology_for(self, clustering: Clustering, participants: list[int], round_index: int) -> RingTopology:
        t_values = {i: self.t(i) for i in participants}
        rng = rng_for(self.config.seed, STREAM_RING, round_index)
        return build_rings(clustering, t_values, self.config.ring_order, rng)

    # -- the ring protocol

    def fedhisyn_round(self, start_models: dict[int, np.ndarray], topology: RingTopology,
                       R: float, round_index: int, lr: float) -> RingRoundResult:
        """Ring training for one round; nothing here touches the server.

        Device-to-device sends are logged; server transfers are the caller's job.
        """
        participants = sorted(start_models)
        states = {
            i: DeviceState(buffer=[Payload(start_models[i], start_models[i])], budget_remaining=R)
            for i in participants
        }
        last: dict[int, Payload] = {}
        pending: dict[int, Payload] = {}
        trainings = {i: 0 for i in participants}
        # (time, phase, device); completions (0) precede starts (1) at equal times
        heap = [(0.0, 1, i) for i in participants]
        heapq.heapify(heap)
        end = R
        deadline = R * (1 + TIME_EPS)

        while heap:
            now, phase, i = heapq.heappop(heap)
            state = states[i]
            if phase == 1:
                payload = state.buffer[-1] if state.buffer else last[i]
                state.buffer.clear()
                state.budget_remaining -= self.t(i)
                run = self.trainer.train(payload.params, i, round_index, trainings[i], lr, track=True)
                self.g_sq_max = max(self.g_sq_max, run.max_grad_sq)
                trainings[i] += 1
                pending[i] = Payload(run.params, payload.initial,
                                     payload.visited_by | {i}, payload.steps + run.steps)
                heapq.heappush(heap, (now + self.t(i), 0, i))
            else:
                done = pending.pop(i)
                last[i] = done
                state.current_model = done.params
                state.visited_by = set(done.visited_by)
                end = max(end, now)
                succ = topology.successor[i]
                if succ != i:
                    self.emit(now, i, succ, 1, round_index)
                states[succ].buffer.append(done)
                if now + self.t(i) <= deadline:
                    heapq.heappush(heap, (now, 1, i))

        held = {i: (states[i].buffer[-1] if states[i].buffer else last[i]) for i in participants}
        return RingRoundResult(last, held, end, trainings)

    def _round_fedhisyn(self, participants: list[int], round_index: int, lr: float) -> float:
        clustering = self.clustering_for(participants)
        topology = self.topology_for(clustering, participants, round_index)
        R = self.round_time(participants)
        w_g = self.server.global_model
        for i in participants:
            self.emit(0.0, SERVER, i, 1, round_index)
        result = self.fedhisyn_round({i: w_g for i in participants}, topology, R, round_index, lr)
        for i in participants:
            self.emit(result.duration, i, SERVER, 1, round_index)
        uploads = [result.uploads[i].params for i in participants]
        if self.config.aggregation == "eq10":
            weights = [clustering.centroids[clustering.assignments[i]] for i in participants]
            self.server.global_model = aggregate_time_weighted(uploads, weights)
        else:
            self.server.global_model = aggregate_uniform(uploads)

        for i in participants:
            p = result.uploads[i]
            eff = (p.initial - p.params) / lr
            self.diagnostics.append(EffectiveGradientRecord(
                round_index + 1, i, len(p.visited_by), p.steps, float(eff @ eff), self.g_sq_max))
        return result.duration

    # -- synchronous baselines

    def _round_local_sgd(self, participants: list[int], round_index: int, lr: float,
                         one_training: bool) -> float:
        cfg = self.config
        proto = cfg.protocol
        R = self.round_time(participants)
        w_g = self.server.global_model
        units = 2 if proto is ProtocolKind.SCAFFOLD else 1
        c_g = self.server.scaffold_control
        for i in participants:
            self.emit(0.0, SERVER, i, units, round_index)

        uploads, delta_cs = [], []
        duration = R
        for i in participants:
            n_train = 1 if one_training else completions_within(R, self.t(i))
            duration = max(duration, self.t(i))  # only exceeds R when R < t_i
            w = w_g
            steps = 0
            if proto is ProtocolKind.SCAFFOLD:
                c_i = self.device_controls.get(i)
                if c_i is None:
                    c_i = np.zeros_like(w_g)
            for j in range(n_train):
                if proto is ProtocolKind.FEDPROX:
                    run = self.trainer.train(w, i, round_index, j, lr, anchor=w_g, mu_prox=cfg.mu_prox)
                elif proto is ProtocolKind.SCAFFOLD:
                    run = self.trainer.train(w, i, round_index, j, lr, c_local=c_i, c_global=c_g)
                else:
                    run = self.trainer.train(w, i, round_index, j, lr)
                w = run.params
                steps += run.steps
            uploads.append(w)
            if proto is ProtocolKind.SCAFFOLD:
                c_new = nn_core.scaffold_control_update(c_i, c_g, w_g, w, steps, lr)
                delta_cs.append(c_new - c_i)
                self.device_controls[i] = c_new

        for i in participants:
            self.emit(duration, i, SERVER, units, round_index)
        if proto is ProtocolKind.SCAFFOLD:
            self.server.global_model = aggregate_uniform(uploads)
            self.server.scaffold_control = c_g + _weighted_sum(
                delta_cs, [1.0 / cfg.num_devices] * len(delta_cs))
        else:
            self.server.global_model = aggregate_sample_weighted(
                uploads, [self.shard_size(i) for i in participants])
        return duration

    # -- asynchronous baselines

    def _round_tafedavg(self, participants: list[int], round_index: int, lr: float) -> float:
        alpha = self.config.tafedavg_alpha
        R = self.round_time(participants)
        deadline = R * (1 + TIME_EPS)
        heap = []
        trainings = {}
        end = R
        for i in participants:
            self.emit(0.0, SERVER, i, 1, round_index)
            run = self.trainer.train(self.server.global_model, i, round_index, 0, lr)
            trainings[i] = 1
            heapq.heappush(heap, (self.t(i), i, run.params))
        while heap:
            now, i, params = heapq.heappop(heap)
            end = max(end, now)
            self.emit(now, i, SERVER, 1, round_index)
            self.server.global_model = (1 - alpha) * self.server.global_model + alpha * params
            if now + self.t(i) <= deadline:
                self.emit(now, SERVER, i, 1, round_index)
                run = self.trainer.train(self.server.global_model, i, round_index, trainings[i], lr)
                trainings[i] += 1
                heapq.heappush(heap, (now + self.t(i), i, run.params))
        return end

    def _fedat_merge(self) -> None:
        srv = self.server
        live = [k for k, c in enumerate(srv.fedat_update_counts) if c > 0]
        inv = [1.0 / srv.fedat_update_counts[k] for k in live]
        total = sum(inv)
        srv.global_model = _weighted_sum([srv.fedat_tier_models[k] for k in live],
                                         [v / total for v in inv])

    def _round_fedat(self, participants: list[int], round_index: int, lr: float) -> float:
        srv = self.server
        clustering = self.clustering_for(participants)
        while len(srv.fedat_tier_models) < clustering.K:
            srv.fedat_tier_models.append(srv.global_model.copy())
            srv.fedat_update_counts.append(0)
        R = self.round_time(participants)
        deadline = R * (1 + TIME_EPS)
        tiers = [clustering.members(k) for k in range(clustering.K)]
        period = [max(self.t(i) for i in members) for members in tiers]
        tier_round = [0] * clustering.K
        end = R

        def start(k: int, now: float):
            members = tiers[k]
            models = []
            for i in members:
                self.emit(now, SERVER, i, 1, round_index)
                models.append(self.trainer.train(srv.global_model, i, round_index, tier_round[k], lr).params)
            tier_round[k] += 1
            heapq.heappush(heap, (now + period[k], k, models))

        heap: list = []
        for k in range(clustering.K):
            start(k, 0.0)
        while heap:
            now, k, models = heapq.heappop(heap)
            end = max(end, now)
            for i in tiers[k]:
                self.emit(now, i, SERVER, 1, round_index)
            srv.fedat_tier_models[k] = aggregate_sample_weighted(
                models, [self.shard_size(i) for i in tiers[k]])
            srv.fedat_update_counts[k] += 1
            self._fedat_merge()
            if now + period[k] <= deadline:
                start(k, now)
        return end

    # -- driver

    def step(self, round_index: int) -> RoundRecord:
        cfg = self.config
        participants = sample_participants(self.profiles, cfg.participation, cfg.seed, round_index)
        lr = cfg.lr_at(round_index)
        proto = cfg.protocol
        if proto is ProtocolKind.FEDHISYN:
            duration = self._round_fedhisyn(participants, round_index, lr)
        elif proto is ProtocolKind.TAFEDAVG:
            duration = self._round_tafedavg(participants, round_index, lr)
        elif proto is ProtocolKind.FEDAT:
            duration = self._round_fedat(participants, round_index, lr)
        else:
            duration = self._round_local_sgd(
                participants, round_index, lr, one_training=proto is ProtocolKind.TFEDAVG)
        self.clock += duration
        self.server.round = round_index + 1
        if self.keep_history:
            self.history.append(self.server.global_model.copy())
        w = self.server.global_model
        return RoundRecord(
            round=round_index + 1,
            virtual_time=self.clock,
            server_model_units=self.server_units,
            d2d_model_units=self.d2d_units,
            test_accuracy=eval_accuracy(self.spec, w, self.test_set),
            train_loss=nn_core.loss(self.spec, w, self.train_set.features, self.train_set.labels),
        )

    def run(self) -> ExperimentResult:
        records = []
        for r in range(self.config.rounds):
            rec = self.step(r)
            log.debug("%s round %d acc=%.4f loss=%.5f", self.config.protocol.value,
                      rec.round, rec.test_accuracy, rec.train_loss)
            records.append(rec)
        return ExperimentResult(self.config, records, self.events, self.server,
                                self.initial_model, self.diagnostics, self.history)


def run_experiment(config: ExperimentConfig, train: Dataset | None = None,
                   test: Dataset | None = None, keep_history: bool = False) -> ExperimentResult:
    return Simulation(config, train, test, keep_history=keep_history).run()


def lemma51_diagnostic(result: ExperimentResult) -> list[EffectiveGradientRecord]:
    if result.config.protocol is not ProtocolKind.FEDHISYN:
        raise ValueError("the effective-gradient diagnostic applies to the ring protocol only")
    return result.diagnostics
