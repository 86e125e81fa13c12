"""Exhaustive grid search scored by stratified k-fold cross-validation."""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FoldPlan, kfold_plan
from .errors import ConfigError, DivergenceError
from .model import ModelConfig, build
from .numerics import Rng, derive_seed, fmt17
from .training import TrainConfig, train

# derive_seed stream ids
_FOLD_PLAN_STREAM = 0x464F4C44
_CONFIG_STREAM = 0x434F4E46


@dataclass(frozen=True)
class HyperParams:
    hidden_sizes: tuple[int, ...]
    activation: str
    optimizer: str
    batch_size: int

    def to_dict(self) -> dict:
        return {
            "hidden_sizes": list(self.hidden_sizes),
            "activation": self.activation,
            "optimizer": self.optimizer,
            "batch_size": self.batch_size,
        }


@dataclass
class GridSpec:
    hidden_layer_options: list = field(default_factory=lambda: [(16, 8, 4), (32, 16, 8), (64, 32, 16)])
    activation_options: list = field(default_factory=lambda: ["sigmoid", "relu"])
    optimizer_options: list = field(default_factory=lambda: ["sgd", "adam"])
    batch_size_options: list = field(default_factory=lambda: [8, 16, 32])

    def __post_init__(self):
        self.hidden_layer_options = [tuple(int(h) for h in opt) for opt in self.hidden_layer_options]
        for name in ("hidden_layer_options", "activation_options", "optimizer_options", "batch_size_options"):
            if not getattr(self, name):
                raise ConfigError(f"grid option list {name} is empty")

    def combinations(self) -> list[HyperParams]:
        """Cartesian product in lexicographic option order (hidden, activation, optimizer, batch)."""
        return [
            HyperParams(h, a, o, b)
            for h, a, o, b in itertools.product(
                self.hidden_layer_options,
                self.activation_options,
                self.optimizer_options,
                self.batch_size_options,
            )
        ]

    def to_dict(self) -> dict:
        return {
            "hidden_layer_options": [list(h) for h in self.hidden_layer_options],
            "activation_options": list(self.activation_options),
            "optimizer_options": list(self.optimizer_options),
            "batch_size_options": list(self.batch_size_options),
        }


def default_grid() -> GridSpec:
    return GridSpec()


@dataclass
class TuneResult:
    index: int
    config: HyperParams
    seed: int
    fold_accuracies: list
    mean_accuracy: float
    std_accuracy: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "seed": self.seed,
            **self.config.to_dict(),
            "fold_accuracies": list(self.fold_accuracies),
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
        }


def config_seed(base_seed: int, index: int) -> int:
    return derive_seed(base_seed, _CONFIG_STREAM, index)


def fold_plan_for(train_set: Dataset, k: int, base_seed: int) -> FoldPlan:
    return kfold_plan(train_set, k, Rng(derive_seed(base_seed, _FOLD_PLAN_STREAM)))


def cross_validate(
    train_set: Dataset,
    hp: HyperParams,
    plan: FoldPlan,
    seed: int,
    epochs: int = 200,
    learning_rate: float | None = None,
) -> list[float]:
    """Validation accuracy of ``hp`` on every fold of ``plan``.

    Fold ``f`` initializes the network from ``derive_seed(seed, f, 0)`` and
    shuffles batches with ``derive_seed(seed, f, 1)``.  A fold whose
    training diverges scores 0.
    """
    scores = []
    for fold in range(plan.k):
        fit_idx, val_idx = plan.fold_indices(fold)
        fit, val = train_set.take(fit_idx), train_set.take(val_idx)
        model = build(
            ModelConfig(
                input_dim=train_set.n_features,
                hidden_sizes=hp.hidden_sizes,
                activation=hp.activation,
                seed=derive_seed(seed, fold, 0),
            )
        )
        tc = TrainConfig(
            epochs=epochs,
            batch_size=hp.batch_size,
            learning_rate=learning_rate,
            optimizer=hp.optimizer,
            seed=derive_seed(seed, fold, 1),
        )
        try:
            train(model, fit, tc)
        except DivergenceError:
            scores.append(0.0)
            continue
        classes, probs = model.predict(val.features)
        if not np.all(np.isfinite(probs)):
            scores.append(0.0)
            continue
        scores.append(float(np.mean(classes == val.labels)))
    return scores


def _summarize(index, hp, seed, scores) -> TuneResult:
    arr = np.asarray(scores, dtype=np.float64)
    mean = float(arr.mean())
    std = float(math.sqrt(float(((arr - mean) ** 2).mean())))
    return TuneResult(index, hp, seed, list(scores), mean, std)


def _run_one(args):
    train_set, index, hp, plan, seed, epochs, lr = args
    return _summarize(index, hp, seed, cross_validate(train_set, hp, plan, seed, epochs, lr))


def rank(results: list[TuneResult]) -> list[TuneResult]:
    """Order by mean accuracy (desc), then std (asc), then grid index."""
    return sorted(results, key=lambda r: (-r.mean_accuracy, r.std_accuracy, r.index))


def grid_search(
    train_set: Dataset,
    grid: GridSpec | None = None,
    k: int = 5,
    base_seed: int = 0,
    epochs: int = 200,
    learning_rate: float | None = None,
    workers: int | None = 1,
    progress=None,
) -> tuple[TuneResult, list[TuneResult]]:
    """Evaluate every grid combination by k-fold CV on one shared fold plan.

    Combination ``i`` trains with seed ``config_seed(base_seed, i)``.
    ``workers > 1`` fans combinations out to processes; results are
    collected by index, so the ranking matches a sequential run exactly.
    ``workers=None`` uses every available CPU.
    """
    grid = grid or default_grid()
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    plan = fold_plan_for(train_set, k, base_seed)
    combos = grid.combinations()
    jobs = [(train_set, i, hp, plan, config_seed(base_seed, i), epochs, learning_rate) for i, hp in enumerate(combos)]
    if workers is None:
        workers = os.cpu_count() or 1
    results = []
    if workers <= 1 or len(jobs) == 1:
        for job in jobs:
            results.append(_run_one(job))
            if progress:
                progress(results[-1])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_run_one, jobs):
                results.append(res)
                if progress:
                    progress(res)
    results.sort(key=lambda r: r.index)
    ranked = rank(results)
    return ranked[0], ranked


def sweep_csv(ranked: list[TuneResult]) -> str:
    k = max((len(r.fold_accuracies) for r in ranked), default=0)
    header = ["rank", "index", "hidden_sizes", "activation", "optimizer", "batch_size", "seed"]
    header += [f"fold{f + 1}_accuracy" for f in range(k)] + ["mean_accuracy", "std_accuracy"]
    lines = [",".join(header)]
    for pos, r in enumerate(ranked, start=1):
        cells = [
            str(pos),
            str(r.index),
            "-".join(str(h) for h in r.config.hidden_sizes),
            r.config.activation,
            r.config.optimizer,
            str(r.config.batch_size),
            str(r.seed),
        ]
        cells += [fmt17(a) for a in r.fold_accuracies] + [fmt17(r.mean_accuracy), fmt17(r.std_accuracy)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
