"""Datasets, linear/logistic models, local training and aggregation.

Models carry one weight per feature plus a trailing bias, so a dataset with
``m`` features pairs with parameter vectors of length ``m + 1``.

The local loss of a device is the *sum* of its per-sample losses. With that
convention the global objective ``(1/D) * sum_k f_k(w)`` is exactly the mean
per-sample loss over the pooled data of all devices.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation, DivergenceError, UnsupportedMetricError


class LossKind(enum.Enum):
    LOGISTIC_BINARY = "logistic_binary"
    SQUARED_ERROR = "squared_error"


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    data_type_tag: str = "tabular"

    def __post_init__(self):
        x = _frozen(self.features)
        y = _frozen(self.labels)
        if x.ndim != 2:
            raise ContractViolation(f"features must be 2-D, got shape {x.shape}")
        if y.ndim != 1:
            raise ContractViolation(f"labels must be 1-D, got shape {y.shape}")
        if x.shape[0] < 1 or x.shape[0] != y.shape[0]:
            raise ContractViolation(
                f"need |features| = |labels| >= 1, got {x.shape[0]} and {y.shape[0]}"
            )
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def with_labels(self, labels: np.ndarray) -> "Dataset":
        return Dataset(self.features, labels, self.data_type_tag)

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        return cls(
            np.vstack([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            parts[0].data_type_tag,
        )


@dataclass(frozen=True, eq=False)
class ModelParams:
    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 1 or w.shape[0] < 1:
            raise ContractViolation(f"weights must be a non-empty vector, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ContractViolation("weights contain NaN or Inf")
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, dim: int) -> "ModelParams":
        return cls(np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.weights.shape == other.weights.shape and bool(
            np.array_equal(self.weights, other.weights)
        )

    __hash__ = None

    def to_bytes(self) -> bytes:
        """``u32`` length followed by big-endian IEEE-754 binary64 entries."""
        return struct.pack(f">I{self.dim}d", self.dim, *self.weights.tolist())

    @classmethod
    def from_bytes(cls, payload: bytes) -> "ModelParams":
        if len(payload) < 4:
            raise ContractViolation("payload too short for a parameter vector")
        (n,) = struct.unpack_from(">I", payload)
        if len(payload) != 4 + 8 * n:
            raise ContractViolation(f"payload length {len(payload)} does not match dim {n}")
        return cls(np.array(struct.unpack_from(f">{n}d", payload, 4)))


@dataclass(frozen=True)
class TrainConfig:
    step_size: float = 0.5
    epochs: int = 5
    loss: LossKind = LossKind.LOGISTIC_BINARY

    def __post_init__(self):
        if not (self.step_size > 0 and math.isfinite(self.step_size)):
            raise ContractViolation(f"step_size must be > 0, got {self.step_size}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ContractViolation(f"epochs must be an integer >= 1, got {self.epochs}")


def _check_dims(params: ModelParams, data: Dataset) -> None:
    if params.dim != data.dim + 1:
        raise ContractViolation(
            f"params have dim {params.dim} but dataset has {data.dim} features (+1 bias)"
        )


def _logits(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x @ w[:-1] + w[-1]


def _sample_losses(w: np.ndarray, data: Dataset, loss: LossKind) -> np.ndarray:
    z = _logits(w, data.features)
    y = data.labels
    if loss is LossKind.LOGISTIC_BINARY:
        # ln(1 + e^z) - y z, never below zero for labels in {0, 1}
        return np.logaddexp(0.0, z) - y * z
    if loss is LossKind.SQUARED_ERROR:
        return (z - y) ** 2
    raise ContractViolation(f"unknown loss kind {loss!r}")


def _gradient(w: np.ndarray, data: Dataset, loss: LossKind) -> np.ndarray:
    z = _logits(w, data.features)
    if loss is LossKind.LOGISTIC_BINARY:
        residual = 0.5 * (1.0 + np.tanh(0.5 * z)) - data.labels
    elif loss is LossKind.SQUARED_ERROR:
        residual = 2.0 * (z - data.labels)
    else:
        raise ContractViolation(f"unknown loss kind {loss!r}")
    grad = np.empty(w.shape[0])
    grad[:-1] = data.features.T @ residual
    grad[-1] = residual.sum()
    return grad


def per_sample_loss(params: ModelParams, data: Dataset, loss: LossKind) -> np.ndarray:
    _check_dims(params, data)
    return _sample_losses(params.weights, data, loss)


def local_loss(params: ModelParams, data: Dataset, loss: LossKind) -> float:
    """Sum of per-sample losses over one device's dataset."""
    return float(np.sum(per_sample_loss(params, data, loss)))


def global_loss(params: ModelParams, datasets: Sequence[Dataset], loss: LossKind) -> float:
    """Sample-weighted global objective: total loss divided by total sample count."""
    if len(datasets) == 0:
        raise ContractViolation("global_loss needs at least one dataset")
    total = sum(len(d) for d in datasets)
    return sum(local_loss(params, d, loss) for d in datasets) / total


def local_gradient(params: ModelParams, data: Dataset, loss: LossKind) -> np.ndarray:
    """Closed-form gradient of :func:`local_loss` with respect to the weights."""
    _check_dims(params, data)
    return _gradient(params.weights, data, loss)


def local_train(start: ModelParams, data: Dataset, cfg: TrainConfig) -> ModelParams:
    """Full-batch gradient descent for ``cfg.epochs`` steps.

    Each step follows the gradient of the *mean* per-sample loss so the step
    size does not need retuning for different dataset sizes.
    """
    _check_dims(start, data)
    w = start.weights.copy()
    n = len(data)
    for epoch in range(1, cfg.epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            value = float(np.sum(_sample_losses(w, data, cfg.loss)))
            if not math.isfinite(value):
                raise DivergenceError(epoch, value)
            w = w - (cfg.step_size / n) * _gradient(w, data, cfg.loss)
        if not np.all(np.isfinite(w)):
            raise DivergenceError(epoch, float("nan"))
    return ModelParams(w)


def aggregate(updates: Iterable[tuple[ModelParams, int]]) -> ModelParams:
    """Sample-size-weighted average of parameter vectors."""
    updates = list(updates)
    if not updates:
        raise ContractViolation("aggregate needs at least one update")
    dim = updates[0][0].dim
    total = 0
    for params, count in updates:
        if params.dim != dim:
            raise ContractViolation("all updates must share one dimension")
        if int(count) != count or count < 1:
            raise ContractViolation(f"sample_count must be an integer >= 1, got {count}")
        total += int(count)
    stacked = np.stack([p.weights for p, _ in updates])
    weights = np.array([c for _, c in updates], dtype=np.float64) / total
    return ModelParams(weights @ stacked)


def predict(params: ModelParams, data: Dataset) -> np.ndarray:
    _check_dims(params, data)
    return (_logits(params.weights, data.features) >= 0.0).astype(np.float64)


def evaluate_accuracy(
    params: ModelParams, data: Dataset, loss: LossKind = LossKind.LOGISTIC_BINARY
) -> float:
    if loss is not LossKind.LOGISTIC_BINARY:
        raise UnsupportedMetricError(f"accuracy is only defined for classification, not {loss.value}")
    _check_dims(params, data)
    return float(np.mean(predict(params, data) == data.labels))
