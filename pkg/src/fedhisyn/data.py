"""Datasets, device partitions and label-skew divergence."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file; ``field`` names the offending header field or section."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if len(self.labels) < 1:
            raise ValueError("dataset must contain at least one sample")
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels disagree on sample count")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)


@dataclass(frozen=True)
class Partition:
    shards: list[np.ndarray]
    beta: float | None  # None marks an IID partition
    seed: int

    @property
    def num_devices(self) -> int:
        return len(self.shards)


def _read_bytes(path) -> bytes:
    data = Path(path).read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _parse_idx(data: bytes, magic: int, ndims: int, kind: str) -> np.ndarray:
    header_len = 4 * (1 + ndims)
    if len(data) < header_len:
        raise IdxFormatError(f"{kind}.header", f"file has {len(data)} bytes, header needs {header_len}")
    (found,) = struct.unpack(">i", data[:4])
    if found != magic:
        raise IdxFormatError(f"{kind}.magic", f"expected 0x{magic:08x}, found 0x{found & 0xFFFFFFFF:08x}")
    dims = struct.unpack(f">{ndims}i", data[4:header_len])
    if any(d < 0 for d in dims):
        raise IdxFormatError(f"{kind}.dims", f"negative dimension in {dims}")
    expected = int(np.prod(dims))
    body = data[header_len:]
    if len(body) < expected:
        raise IdxFormatError(f"{kind}.data", f"truncated: expected {expected} bytes, found {len(body)}")
    return np.frombuffer(body[:expected], dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair (optionally gzipped) into a Dataset scaled to [0, 1]."""
    images = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, 3, "images")
    labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, 1, "labels")
    if len(images) != len(labels):
        raise IdxFormatError(
            "count", f"images file holds {len(images)} items, labels file holds {len(labels)}"
        )
    if len(labels) and labels.max() >= num_classes:
        raise IdxFormatError("labels.data", f"label {labels.max()} outside [0, {num_classes})")
    features = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), num_classes)


def load_mnist(directory, train: bool = True) -> Dataset:
    directory = Path(directory)
    prefix = "train" if train else "t10k"
    paths = []
    for kind in ("images-idx3", "labels-idx1"):
        base = directory / f"{prefix}-{kind}-ubyte"
        gz = base.with_name(base.name + ".gz")
        if base.exists():
            paths.append(base)
        elif gz.exists():
            paths.append(gz)
        else:
            raise FileNotFoundError(f"missing {base} (or {gz.name})")
    return load_idx(*paths)


def synth_dataset(
    n_samples: int,
    input_dim: int,
    num_classes: int,
    class_separation: float,
    seed: int,
) -> Dataset:
    """Unit-variance Gaussian blobs with balanced classes.

    Class means sit ``class_separation`` apart along orthonormal axes (random
    unit directions once classes outnumber dimensions).
    """
    if n_samples < num_classes:
        raise ValueError("n_samples must be at least num_classes")
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((max(num_classes, input_dim), input_dim))
    if num_classes <= input_dim:
        q, _ = np.linalg.qr(directions.T)
        means = q.T[:num_classes]
    else:
        means = directions[:num_classes]
        means /= np.linalg.norm(means, axis=1, keepdims=True)
    means = means * (class_separation / np.sqrt(2.0))

    labels = rng.permutation(np.arange(n_samples) % num_classes)
    x = means[labels] + rng.standard_normal((n_samples, input_dim))
    return Dataset(x, labels.astype(np.int64), num_classes)


def train_test_split(dataset: Dataset, test_size: int, seed: int) -> tuple[Dataset, Dataset]:
    perm = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(np.sort(perm[test_size:])), dataset.subset(np.sort(perm[:test_size]))


def stratified_subset(dataset: Dataset, n_samples: int, seed: int) -> Dataset:
    """Class-proportional subsample of ``n_samples`` rows."""
    if n_samples >= len(dataset):
        return dataset
    rng = np.random.default_rng(seed)
    fraction = n_samples / len(dataset)
    keep = []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        keep.append(rng.choice(idx, size=int(round(fraction * len(idx))), replace=False))
    return dataset.subset(np.sort(np.concatenate(keep)))


def _check_feasible(n_samples: int, num_devices: int) -> None:
    if num_devices < 1:
        raise ValueError("num_devices must be at least 1")
    if num_devices > n_samples:
        raise ValueError(f"cannot give {num_devices} devices a nonempty shard from {n_samples} samples")


def partition_dirichlet(dataset: Dataset, num_devices: int, beta: float, seed: int) -> Partition:
    _check_feasible(len(dataset), num_devices)
    if beta <= 0:
        raise ValueError("beta must be positive")
    rng = np.random.default_rng(seed)
    buckets: list[list[np.ndarray]] = [[] for _ in range(num_devices)]
    for c in range(dataset.num_classes):
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        if len(idx) == 0:
            continue
        proportions = rng.dirichlet(np.full(num_devices, beta))
        cuts = (np.cumsum(proportions)[:-1] * len(idx)).astype(np.int64)
        for device, piece in enumerate(np.split(idx, cuts)):
            buckets[device].append(piece)
    shards = [np.concatenate(b) if b else np.empty(0, dtype=np.int64) for b in buckets]

    for device in range(num_devices):
        if len(shards[device]) == 0:
            donor = max(range(num_devices), key=lambda d: (len(shards[d]), -d))
            shards[device] = shards[donor][-1:]
            shards[donor] = shards[donor][:-1]
    return Partition([np.sort(s) for s in shards], beta, seed)


def partition_iid(dataset: Dataset, num_devices: int, seed: int) -> Partition:
    """Deal samples round-robin after a per-class shuffle, so every shard mirrors the label mix."""
    _check_feasible(len(dataset), num_devices)
    rng = np.random.default_rng(seed)
    order = np.concatenate([
        rng.permutation(np.flatnonzero(dataset.labels == c)) for c in range(dataset.num_classes)
    ])
    return Partition([np.sort(order[i::num_devices]) for i in range(num_devices)], None, seed)


def label_distribution(labels: np.ndarray, num_classes: int) -> np.ndarray:
    return np.bincount(labels, minlength=num_classes) / len(labels)


def divergence_D(dataset: Dataset, partition: Partition) -> float:
    """Summed L1 gap between each device's label distribution and the global one."""
    global_dist = label_distribution(dataset.labels, dataset.num_classes)
    total = 0.0
    for shard in partition.shards:
        local = label_distribution(dataset.labels[shard], dataset.num_classes)
        total += float(np.abs(local - global_dist).sum())
    return total
