"""Run configuration and the shared preprocessing path.

Preprocessing order: undersample -> stratified holdout split -> impute and
standardize with parameters fitted on the training split only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import (
    PIMA_SCHEMA,
    Dataset,
    ImputeParams,
    ScalerParams,
    Schema,
    apply_standardizer,
    fit_standardizer,
    holdout_split,
    impute_missing,
    load_csv,
    undersample,
)
from .errors import ConfigError
from .model import ModelConfig, build
from .numerics import Rng, derive_seed
from .training import TrainConfig
from .tuning import GridSpec, HyperParams

CONFIG_VERSION = 1

# derive_seed stream ids, one per consumer of randomness
STREAM_UNDERSAMPLE = 1
STREAM_SPLIT = 2
STREAM_MODEL = 3
STREAM_TRAIN = 4
STREAM_TUNE = 5


def _strict(section: str, d: dict, allowed: set) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(extra)}")
    return d


@dataclass
class DatasetConfig:
    path: Path
    name: str = "pima"
    schema: Schema = PIMA_SCHEMA


@dataclass
class PreprocessConfig:
    impute: bool = True
    undersample: bool = True
    standardize: bool = True
    test_fraction: float = 0.2


@dataclass
class TuneConfig:
    k: int = 5
    epochs: int | None = None
    workers: int | None = None
    grid: GridSpec = field(default_factory=GridSpec)


@dataclass
class BaselineConfig:
    knn: bool = True
    knn_k: int = 5
    logistic: bool = True
    logistic_learning_rate: float = 0.1
    logistic_epochs: int = 500


@dataclass
class RunConfig:
    dataset: DatasetConfig
    seed: int = 42
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    hidden_sizes: tuple = (64, 32, 16)
    activation: str = "sigmoid"
    train: TrainConfig = field(default_factory=TrainConfig)
    tune: TuneConfig = field(default_factory=TuneConfig)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    pca_dims: int = 2
    report_inputs: list = field(default_factory=list)
    include_reference: bool = True
    output_dir: Path = Path("runs")

    @property
    def hyperparams(self) -> HyperParams:
        return HyperParams(tuple(self.hidden_sizes), self.activation, self.train.optimizer, self.train.batch_size)

    def model_config(self, input_dim: int) -> ModelConfig:
        return ModelConfig(
            input_dim=input_dim,
            hidden_sizes=tuple(self.hidden_sizes),
            activation=self.activation,
            seed=derive_seed(self.seed, STREAM_MODEL),
        )

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(t.epochs, t.batch_size, t.learning_rate, t.optimizer, derive_seed(self.seed, STREAM_TRAIN))

    def tune_seed(self) -> int:
        return derive_seed(self.seed, STREAM_TUNE)

    def with_hyperparams(self, hp: HyperParams) -> "RunConfig":
        self.hidden_sizes = tuple(hp.hidden_sizes)
        self.activation = hp.activation
        self.train = TrainConfig(self.train.epochs, hp.batch_size, self.train.learning_rate, hp.optimizer, self.train.seed)
        return self


TOP_KEYS = {
    "version", "dataset", "seed", "preprocess", "model", "train", "tune",
    "baselines", "visualize", "report", "output_dir",
}


def parse_config(doc: dict, base_dir: Path | str = ".") -> RunConfig:
    """Validate a config document; relative paths resolve against ``base_dir``."""
    base_dir = Path(base_dir)
    _strict("<root>", doc, TOP_KEYS)
    version = doc.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r} (expected {CONFIG_VERSION})")

    ds = _strict("dataset", doc.get("dataset", {}), {"path", "name", "schema", "schema_path"})
    if "path" not in ds:
        raise ConfigError("dataset.path is required")
    if "schema" in ds and "schema_path" in ds:
        raise ConfigError("give either dataset.schema or dataset.schema_path, not both")
    if "schema_path" in ds:
        schema_doc = json.loads((base_dir / ds["schema_path"]).read_text(encoding="utf-8"))
        schema = Schema.from_dict(schema_doc)
    elif "schema" in ds:
        schema = Schema.from_dict(ds["schema"])
    else:
        schema = PIMA_SCHEMA
    dataset = DatasetConfig(base_dir / ds["path"], ds.get("name", "pima"), schema)

    pp = _strict("preprocess", doc.get("preprocess", {}), {"impute", "undersample", "standardize", "test_fraction"})
    model = _strict("model", doc.get("model", {}), {"hidden_sizes", "activation"})
    tr = _strict("train", doc.get("train", {}), {"epochs", "batch_size", "learning_rate", "optimizer"})
    tu = _strict("tune", doc.get("tune", {}), {"k", "epochs", "workers", "grid"})
    bl = _strict("baselines", doc.get("baselines", {}),
                 {"knn", "knn_k", "logistic", "logistic_learning_rate", "logistic_epochs"})
    vis = _strict("visualize", doc.get("visualize", {}), {"dims"})
    rep = _strict("report", doc.get("report", {}), {"inputs", "include_reference"})

    grid = GridSpec()
    if tu.get("grid") is not None:
        g = _strict("tune.grid", tu["grid"],
                    {"hidden_layer_options", "activation_options", "optimizer_options", "batch_size_options"})
        grid = GridSpec(**g)

    try:
        cfg = RunConfig(
            dataset=dataset,
            seed=int(doc.get("seed", 42)),
            preprocess=PreprocessConfig(**pp),
            hidden_sizes=tuple(model.get("hidden_sizes", (64, 32, 16))),
            activation=model.get("activation", "sigmoid"),
            train=TrainConfig(**tr),
            tune=TuneConfig(k=tu.get("k", 5), epochs=tu.get("epochs"), workers=tu.get("workers"), grid=grid),
            baselines=BaselineConfig(**bl),
            pca_dims=int(vis.get("dims", 2)),
            report_inputs=[base_dir / p for p in rep.get("inputs", [])],
            include_reference=bool(rep.get("include_reference", True)),
            output_dir=base_dir / doc.get("output_dir", "runs"),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    # surface invalid model hyperparameters at load time
    ModelConfig(input_dim=len(schema.feature_names), hidden_sizes=cfg.hidden_sizes, activation=cfg.activation)
    if not 0.0 < cfg.preprocess.test_fraction < 1.0:
        raise ConfigError("preprocess.test_fraction must lie in (0, 1)")
    return cfg


def set_path(doc: dict, dotted: str, value) -> None:
    """Assign ``value`` at a dotted key path, creating sections as needed."""
    keys = dotted.split(".")
    node = doc
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override {dotted!r}: {key!r} is not a section")
    node[keys[-1]] = value


def load_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    for dotted, value in overrides:
        set_path(doc, dotted, value)
    return parse_config(doc, path.parent)


@dataclass
class Prepared:
    raw: Dataset
    balanced: Dataset
    train: Dataset
    test: Dataset
    impute: ImputeParams | None
    scaler: ScalerParams | None

    def summary(self) -> dict:
        return {
            "raw_rows": self.raw.n_rows,
            "balanced_rows": self.balanced.n_rows,
            "train_rows": self.train.n_rows,
            "test_rows": self.test.n_rows,
            "train_class_counts": list(self.train.class_counts()),
            "test_class_counts": list(self.test.class_counts()),
            "impute": self.impute.to_dict() if self.impute else None,
            "scaler": self.scaler.to_dict() if self.scaler else None,
        }


def prepare(raw: Dataset, cfg: RunConfig) -> Prepared:
    pp = cfg.preprocess
    balanced = undersample(raw, Rng(derive_seed(cfg.seed, STREAM_UNDERSAMPLE))) if pp.undersample else raw
    train, test = holdout_split(balanced, pp.test_fraction, Rng(derive_seed(cfg.seed, STREAM_SPLIT)))
    impute = scaler = None
    if pp.impute:
        train, impute = impute_missing(train)
        test, _ = impute_missing(test, impute)
    if pp.standardize:
        scaler = fit_standardizer(train)
        train = apply_standardizer(train, scaler)
        test = apply_standardizer(test, scaler)
    return Prepared(raw, balanced, train, test, impute, scaler)


def load_and_prepare(cfg: RunConfig) -> Prepared:
    return prepare(load_csv(cfg.dataset.path, cfg.dataset.schema), cfg)


def build_model(cfg: RunConfig, input_dim: int):
    return build(cfg.model_config(input_dim))
