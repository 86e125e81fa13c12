"""Comparison classifiers: k-nearest neighbours and logistic regression."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigError, DivergenceError, ImbalanceError, ShapeError
from .numerics import fmt17, matmul


@dataclass
class KnnModel:
    features: np.ndarray
    labels: np.ndarray
    k: int = 5

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.k > len(self.labels):
            raise ConfigError(f"k={self.k} exceeds the {len(self.labels)} training rows")

    def to_dict(self) -> dict:
        return {
            "kind": "knn",
            "k": self.k,
            "features": [[fmt17(v) for v in row] for row in self.features],
            "labels": self.labels.tolist(),
        }


def knn_fit(train: Dataset, k: int = 5) -> KnnModel:
    return KnnModel(train.features, train.labels, k)


def knn_predict(model: KnnModel, queries: np.ndarray) -> np.ndarray:
    """Majority vote among the k nearest training rows (Euclidean).

    Equal distances favour the lower training-row index.  A tied vote goes
    to the class whose members in the k-set have the smaller summed
    distance, and to class 0 if that ties too.
    """
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != model.features.shape[1]:
        raise ShapeError(f"queries must have {model.features.shape[1]} columns, got shape {q.shape}")
    if model.k > len(model.labels):
        raise ConfigError(f"k={model.k} exceeds the {len(model.labels)} training rows")
    out = np.zeros(len(q), dtype=np.int64)
    for i, row in enumerate(q):
        diff = model.features - row
        dist = np.sqrt((diff * diff).sum(axis=1))
        nearest = np.argsort(dist, kind="stable")[: model.k]
        votes = model.labels[nearest]
        ones = int(votes.sum())
        zeros = model.k - ones
        if ones != zeros:
            out[i] = int(ones > zeros)
        else:
            d1 = dist[nearest][votes == 1].sum()
            d0 = dist[nearest][votes == 0].sum()
            out[i] = int(d1 < d0)
    return out


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float = 0.0

    def to_dict(self) -> dict:
        return {"kind": "logistic", "weights": [fmt17(w) for w in self.weights], "bias": fmt17(self.bias)}


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def logistic_loss_grad(weights, bias, x, y) -> tuple[float, np.ndarray, float]:
    """Mean binary cross-entropy and its gradient w.r.t. (weights, bias)."""
    z = matmul(x, weights.reshape(-1, 1)).ravel() + bias
    # log(1 + e^z) - y z, computed without overflow
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    err = (_sigmoid(z) - y) / len(y)
    grad_w = matmul(err.reshape(1, -1), x).ravel()
    return loss, grad_w, float(err.sum())


def logistic_fit(
    train: Dataset, learning_rate: float = 0.1, epochs: int = 500, seed: int = 0, history=None
) -> LogisticModel:
    """Full-batch gradient descent from zero parameters.

    ``seed`` is accepted for interface symmetry; the fit is deterministic
    and draws no random numbers.  Pass a list as ``history`` to collect the
    loss before every update.
    """
    n_neg, n_pos = train.class_counts()
    if n_neg == 0 or n_pos == 0:
        raise ImbalanceError("logistic regression needs both classes present")
    x = train.features
    y = train.labels.astype(np.float64)
    w = np.zeros(x.shape[1])
    b = 0.0
    for epoch in range(1, epochs + 1):
        loss, gw, gb = logistic_loss_grad(w, b, x, y)
        if not math.isfinite(loss):
            raise DivergenceError(epoch, 1, loss)
        if history is not None:
            history.append(loss)
        w = w - learning_rate * gw
        b = b - learning_rate * gb
    if not (np.all(np.isfinite(w)) and math.isfinite(b)):
        raise DivergenceError(epochs, 1, float("nan"))
    return LogisticModel(w, b)


def logistic_predict(model: LogisticModel, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Class 1 iff the probability is strictly above 0.5."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != len(model.weights):
        raise ShapeError(f"features must have {len(model.weights)} columns, got shape {x.shape}")
    p = _sigmoid(matmul(x, model.weights.reshape(-1, 1)).ravel() + model.bias)
    return (p > 0.5).astype(np.int64), p
