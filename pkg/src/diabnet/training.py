"""Mini-batch training with cross-entropy loss and SGD or Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, DivergenceError, LabelError, ShapeError
from .model import Model
from .numerics import Rng, fmt17

PROB_FLOOR = 1e-12
DEFAULT_LEARNING_RATES = {"adam": 1e-3, "sgd": 1e-2}


def cross_entropy(probs: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the softmax logits.

    Probabilities are clamped to ``PROB_FLOOR`` before the log.
    """
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = probs.shape[0]
    if len(y) != n:
        raise ShapeError(f"{n} probability rows but {len(y)} labels")
    if not np.all((y == 0) | (y == 1)):
        raise LabelError("labels must be 0 or 1")
    if n == 0:
        return 0.0, np.zeros_like(probs)
    picked = np.maximum(probs[np.arange(n), y], PROB_FLOOR)
    loss = float(-np.log(picked).sum() / n)
    grad = probs.copy()
    grad[np.arange(n), y] -= 1.0
    grad /= n
    return loss, grad


def _check_shapes(params, grads):
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"parameter shape {np.shape(p)} does not match gradient shape {np.shape(g)}")


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def sgd_step(params, grads, learning_rate: float) -> None:
    """In place: ``p -= learning_rate * g`` for every parameter array."""
    params, grads = _as_list(params), _as_list(grads)
    _check_shapes(params, grads)
    for p, g in zip(params, grads):
        p -= learning_rate * g


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_step(params, grads, state: AdamState, learning_rate: float = 1e-3) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``; returns ``state``.

    Moment buffers are created on the first call and must keep the same
    shapes afterwards.
    """
    params, grads = _as_list(params), _as_list(grads)
    _check_shapes(params, grads)
    if not state.m:
        state.m = [np.zeros(np.shape(p)) for p in params]
        state.v = [np.zeros(np.shape(p)) for p in params]
    _check_shapes(state.m, params)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return state


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float | None = None
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in DEFAULT_LEARNING_RATES:
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")

    @property
    def lr(self) -> float:
        if self.learning_rate is None:
            return DEFAULT_LEARNING_RATES[self.optimizer]
        return self.learning_rate

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.lr,
            "optimizer": self.optimizer,
            "seed": self.seed,
        }


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    steps: int = 0

    def to_csv(self) -> str:
        lines = ["epoch,loss,accuracy"]
        for i, (l, a) in enumerate(zip(self.loss, self.accuracy), start=1):
            lines.append(f"{i},{fmt17(l)},{fmt17(a)}")
        return "\n".join(lines) + "\n"


def batches(n_rows: int, batch_size: int, rng: Rng):
    """Shuffled index batches for one epoch; a trailing single row is dropped."""
    order = rng.permutation(n_rows)
    for start in range(0, n_rows, batch_size):
        idx = order[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


def train(model: Model, train_set: Dataset, config: TrainConfig, on_epoch=None) -> tuple[Model, TrainHistory]:
    """Fit ``model`` in place on ``train_set``; returns the model and per-epoch history.

    History records the mean training loss over the epoch's batches and
    the fraction of rows classified correctly during those train-mode passes.
    ``on_epoch(epoch, model, history)`` runs after every epoch; a truthy
    return value stops training early.
    """
    if train_set.n_rows < config.batch_size:
        raise ConfigError(f"training set has {train_set.n_rows} rows, fewer than batch_size={config.batch_size}")
    x, y = train_set.features, train_set.labels
    rng = Rng(config.seed)
    lr = config.lr
    state = AdamState() if config.optimizer == "adam" else None
    history = TrainHistory()
    # overflow shows up as a non-finite loss or parameter and is raised below
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.epochs + 1):
            _run_epoch(model, x, y, config, rng, lr, state, history, epoch)
            if on_epoch is not None and on_epoch(epoch, model, history):
                break
    return model, history


def _run_epoch(model, x, y, config, rng, lr, state, history, epoch):
    loss_sum = 0.0
    correct = 0
    seen = 0
    for b, idx in enumerate(batches(len(y), config.batch_size, rng), start=1):
        yb = y[idx]
        probs, cache = model.forward(x[idx], "train")
        loss, _ = cross_entropy(probs, yb)
        if not math.isfinite(loss):
            raise DivergenceError(epoch, b, loss)
        grad = model.backward(cache, yb)
        if state is not None:
            adam_step(model.params, grad, state, lr)
        else:
            sgd_step(model.params, grad, lr)
        history.steps += 1
        loss_sum += loss * len(idx)
        correct += int(np.sum((probs[:, 1] > probs[:, 0]) == (yb == 1)))
        seen += len(idx)
    epoch_loss = loss_sum / seen
    if not np.all(np.isfinite(model.params)):
        raise DivergenceError(epoch, b, float("nan"))
    history.loss.append(epoch_loss)
    history.accuracy.append(correct / seen)
