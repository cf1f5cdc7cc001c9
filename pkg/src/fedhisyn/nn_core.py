"""Flat-parameter softmax models with hand-written backprop.

A model is a stack of dense layers (ReLU between them) followed by a softmax.
Parameters live in one flat float64 vector laid out layer by layer as
``W (fan_in x fan_out, row-major)`` then ``b (fan_out)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    num_classes: int
    hidden_dims: tuple[int, ...] = ()
    activation: str = "relu"
    l2: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.num_classes < 1:
            raise ValueError("input_dim and num_classes must be positive")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def num_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)


@dataclass
class Batch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.atleast_2d(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.features) != len(self.labels):
            raise ValueError(
                f"features has {len(self.features)} rows but labels has {len(self.labels)}"
            )
        if len(self.labels) == 0:
            raise ValueError("batch must contain at least one sample")


@dataclass
class GradResult:
    loss: float
    grad: np.ndarray = field(repr=False)


GradFn = Callable[[ModelSpec, np.ndarray, Batch], GradResult]


def _unpack(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    if params.ndim != 1 or len(params) != spec.num_params:
        raise ValueError(f"params has shape {params.shape}, expected ({spec.num_params},)")
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_shapes:
        w = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset : offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Uniform weights with variance 1/fan_in, zero biases."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in spec.layer_shapes:
        bound = np.sqrt(3.0 / fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def _check_features(spec: ModelSpec, features: np.ndarray) -> np.ndarray:
    features = np.atleast_2d(features)
    if features.shape[1] != spec.input_dim:
        raise ValueError(f"features have {features.shape[1]} columns, expected {spec.input_dim}")
    return features


def forward(spec: ModelSpec, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Class-probability matrix, one row per sample."""
    h = _check_features(spec, features)
    layers = _unpack(spec, params)
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
    w, b = layers[-1]
    return _softmax(h @ w + b)


def loss(spec: ModelSpec, params: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy plus the l2 penalty, without computing a gradient."""
    probs = forward(spec, params, features)
    labels = np.asarray(labels, dtype=np.int64)
    picked = probs[np.arange(len(labels)), labels]
    value = -np.mean(np.log(np.maximum(picked, 1e-300)))
    if spec.l2:
        value += 0.5 * spec.l2 * float(params @ params)
    return float(value)


def grad(spec: ModelSpec, params: np.ndarray, batch: Batch) -> GradResult:
    h = _check_features(spec, batch.features)
    labels = batch.labels
    if labels.min() < 0 or labels.max() >= spec.num_classes:
        raise ValueError(f"labels must lie in [0, {spec.num_classes})")
    layers = _unpack(spec, params)
    n = len(labels)

    activations = [h]
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
        activations.append(h)
    w, b = layers[-1]
    probs = _softmax(h @ w + b)
    rows = np.arange(n)
    value = -np.mean(np.log(np.maximum(probs[rows, labels], 1e-300)))

    # dL/dlogits for mean cross-entropy
    delta = probs
    delta[rows, labels] -= 1.0
    delta /= n

    out = np.empty_like(params)
    grads = _unpack(spec, out)
    for layer in range(len(layers) - 1, -1, -1):
        gw, gb = grads[layer]
        a = activations[layer]
        np.matmul(a.T, delta, out=gw)
        np.sum(delta, axis=0, out=gb)
        if layer > 0:
            delta = delta @ layers[layer][0].T
            delta *= a > 0
    if spec.l2:
        value += 0.5 * spec.l2 * float(params @ params)
        out += spec.l2 * params
    return GradResult(loss=float(value), grad=out)


def sgd_step(
    spec: ModelSpec, params: np.ndarray, batch: Batch, lr: float, grad_fn: GradFn = grad
) -> np.ndarray:
    if lr <= 0:
        raise ValueError("lr must be positive")
    return params - lr * grad_fn(spec, params, batch).grad


def _check_same_length(params: np.ndarray, **others: np.ndarray) -> None:
    for name, vec in others.items():
        if vec.shape != params.shape:
            raise ValueError(f"{name} has shape {vec.shape}, params has {params.shape}")


def prox_sgd_step(
    spec: ModelSpec,
    params: np.ndarray,
    anchor: np.ndarray,
    batch: Batch,
    lr: float,
    mu_prox: float,
    grad_fn: GradFn = grad,
) -> np.ndarray:
    _check_same_length(params, anchor=anchor)
    if mu_prox < 0:
        raise ValueError("mu_prox must be nonnegative")
    g = grad_fn(spec, params, batch).grad
    if mu_prox:
        g = g + mu_prox * (params - anchor)
    return params - lr * g


def scaffold_step(
    spec: ModelSpec,
    params: np.ndarray,
    batch: Batch,
    lr: float,
    c_local: np.ndarray,
    c_global: np.ndarray,
    grad_fn: GradFn = grad,
) -> np.ndarray:
    _check_same_length(params, c_local=c_local, c_global=c_global)
    g = grad_fn(spec, params, batch).grad
    # correction first so equal controls cancel exactly
    return params - lr * (g + (c_global - c_local))


def scaffold_control_update(
    c_local: np.ndarray,
    c_global: np.ndarray,
    start_params: np.ndarray,
    end_params: np.ndarray,
    steps: int,
    lr: float,
) -> np.ndarray:
    """Refresh a device control variate from the net displacement of its local run."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    return c_local - c_global + (start_params - end_params) / (steps * lr)
