"""Command-line entry point: ``diabnet <command> --config run.json``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import knn_fit, knn_predict, logistic_fit, logistic_predict
from .data import (
    apply_standardizer,
    dataset_to_csv,
    fit_standardizer,
    impute_missing,
    load_csv,
    matrix_to_csv,
    pca_fit_project,
    undersample,
)
from .errors import DiabnetError, ShapeError
from .evaluation import ReportEntry, confusion, metrics, reference_rows, report
from .io import atomic_write_json, atomic_write_text
from .model import Model
from .numerics import Rng, column_stats, derive_seed, fmt17, pearson_correlation
from .pipeline import STREAM_UNDERSAMPLE, RunConfig, build_model, load_and_prepare, load_config
from .training import train
from .tuning import HyperParams, grid_search, sweep_csv

BPNN_NAME = "BPNN + BatchNorm"


def _out(cfg: RunConfig, name: str) -> Path:
    return cfg.output_dir / name


def _correlation_csv(corr, names) -> str:
    lines = [",".join(["feature", *names])]
    for name, row in zip(names, corr):
        lines.append(",".join([name, *(fmt17(v) for v in row)]))
    return "\n".join(lines) + "\n"


def cmd_inspect(cfg: RunConfig, args) -> int:
    ds = load_csv(cfg.dataset.path, cfg.dataset.schema)
    n_neg, n_pos = ds.class_counts()
    print(f"{ds.n_rows} rows, {ds.n_features} features, {n_pos} positive / {n_neg} negative")
    summary = {
        "dataset": cfg.dataset.name,
        "path": str(cfg.dataset.path),
        "rows": ds.n_rows,
        "features": ds.n_features,
        "positive": n_pos,
        "negative": n_neg,
        "feature_stats": {},
    }
    if ds.n_rows:
        means, stds = column_stats(ds.features)
        for name, m, s in zip(ds.schema.feature_names, means, stds):
            summary["feature_stats"][name] = {"mean": float(m), "std": float(s)}
            print(f"  {name:<28} mean {m:12.4f}  std {s:12.4f}")
    if ds.n_rows >= 2:
        x = impute_missing(ds)[0].features if cfg.preprocess.impute else ds.features
        corr = pearson_correlation(x, ds.schema.feature_names)
        atomic_write_text(_out(cfg, "correlation.csv"), _correlation_csv(corr, ds.schema.feature_names))
    atomic_write_json(_out(cfg, "inspect.json"), summary)
    return 0


def cmd_preprocess(cfg: RunConfig, args) -> int:
    prep = load_and_prepare(cfg)
    atomic_write_text(_out(cfg, "train.csv"), dataset_to_csv(prep.train))
    atomic_write_text(_out(cfg, "test.csv"), dataset_to_csv(prep.test))
    atomic_write_json(_out(cfg, "preprocess.json"), prep.summary())
    s = prep.summary()
    print(f"balanced {s['balanced_rows']} rows -> train {s['train_rows']} / test {s['test_rows']}")
    return 0


def cmd_tune(cfg: RunConfig, args) -> int:
    prep = load_and_prepare(cfg)
    epochs = cfg.tune.epochs or cfg.train.epochs
    n = len(cfg.tune.grid.combinations())

    def progress(res):
        print(
            f"[{res.index + 1}/{n}] {res.config.to_dict()} mean acc {res.mean_accuracy:.4f} (std {res.std_accuracy:.4f})",
            flush=True,
        )

    best, ranked = grid_search(
        prep.train,
        cfg.tune.grid,
        k=cfg.tune.k,
        base_seed=cfg.tune_seed(),
        epochs=epochs,
        learning_rate=cfg.train.learning_rate,
        workers=cfg.tune.workers,
        progress=None if args.quiet else progress,
    )
    atomic_write_text(_out(cfg, "sweep.csv"), sweep_csv(ranked))
    atomic_write_json(_out(cfg, "best_config.json"), best.to_dict())
    print(f"best: {best.config.to_dict()} mean acc {best.mean_accuracy:.4f}")
    return 0


def _apply_best(cfg: RunConfig, path) -> None:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg.with_hyperparams(
        HyperParams(tuple(doc["hidden_sizes"]), doc["activation"], doc["optimizer"], int(doc["batch_size"]))
    )


def cmd_train(cfg: RunConfig, args) -> int:
    if args.best_config:
        _apply_best(cfg, args.best_config)
    prep = load_and_prepare(cfg)
    model = build_model(cfg, prep.train.n_features)
    model, history = train(model, prep.train, cfg.train_config())
    model.save(args.model or _out(cfg, "model.json"))
    atomic_write_text(_out(cfg, "history.csv"), history.to_csv())
    print(f"trained {cfg.train.epochs} epochs; final loss {history.loss[-1]:.6f}, "
          f"train accuracy {history.accuracy[-1]:.4f}")
    return 0


def evaluate_entries(cfg: RunConfig, prep, model: Model) -> list[ReportEntry]:
    """Score the network and the enabled baselines on the held-out split."""
    if model.input_dim != prep.test.n_features:
        raise ShapeError(f"model expects {model.input_dim} features, dataset has {prep.test.n_features}")
    name = cfg.dataset.name
    x, y = prep.test.features, prep.test.labels
    entries = []
    classes, _ = model.predict(x)
    cm = confusion(classes, y)
    entries.append(ReportEntry(BPNN_NAME, name, metrics(cm), "local", cm))
    if cfg.baselines.knn:
        knn = knn_fit(prep.train, cfg.baselines.knn_k)
        cm = confusion(knn_predict(knn, x), y)
        entries.append(ReportEntry("KNN", name, metrics(cm), "local", cm))
    if cfg.baselines.logistic:
        lr = logistic_fit(prep.train, cfg.baselines.logistic_learning_rate, cfg.baselines.logistic_epochs)
        cm = confusion(logistic_predict(lr, x)[0], y)
        entries.append(ReportEntry("Logistic Regression", name, metrics(cm), "local", cm))
    return entries


def _write_report(cfg: RunConfig, entries) -> str:
    refs = reference_rows() if cfg.include_reference else []
    md, csv_text = report(entries, refs)
    header = "# Diabetes diagnosis results\n\n" \
             "Rows with source `local` are locally reproduced: measured by this run on the held-out test split.\n" \
             "Rows with source `reported` are literature values shipped as static reference data " \
             "(reported, not reproduced).\n\n"
    atomic_write_text(_out(cfg, "report.md"), header + md)
    atomic_write_text(_out(cfg, "report.csv"), csv_text)
    return md


def cmd_evaluate(cfg: RunConfig, args) -> int:
    prep = load_and_prepare(cfg)
    model = Model.load(args.model or _out(cfg, "model.json"))
    entries = evaluate_entries(cfg, prep, model)
    atomic_write_json(_out(cfg, "metrics.json"), {"entries": [e.to_dict() for e in entries]})
    for e in entries:
        acc, sens, spec = (("-" if v is None else f"{v:.4f}") for v in e.metrics.as_tuple())
        print(f"{e.model:<22} accuracy {acc}  sensitivity {sens}  specificity {spec}")
    print(f"{BPNN_NAME + ' (reported)':<22} accuracy 0.8981  sensitivity 0.8929  specificity 0.9038  [static reference]")
    _write_report(cfg, entries)
    return 0


def cmd_visualize(cfg: RunConfig, args) -> int:
    ds = load_csv(cfg.dataset.path, cfg.dataset.schema)
    if cfg.preprocess.impute:
        ds, _ = impute_missing(ds)
    if cfg.preprocess.undersample:
        ds = undersample(ds, Rng(derive_seed(cfg.seed, STREAM_UNDERSAMPLE)))
    if cfg.preprocess.standardize:
        ds = apply_standardizer(ds, fit_standardizer(ds))
    dims = cfg.pca_dims
    proj, explained = pca_fit_project(ds, dims)
    header = [f"pc{i + 1}" for i in range(dims)] + ["label"]
    atomic_write_text(_out(cfg, "pca.csv"), matrix_to_csv(proj, header, [ds.labels]))
    total = float(np.sum(column_stats(ds.features)[1] ** 2))
    lines = ["component,explained_variance,ratio"]
    for i, v in enumerate(explained, start=1):
        lines.append(f"pc{i},{fmt17(v)},{fmt17(v / total)}")
    atomic_write_text(_out(cfg, "explained_variance.csv"), "\n".join(lines) + "\n")
    corr = pearson_correlation(ds.features, ds.schema.feature_names)
    atomic_write_text(_out(cfg, "correlation.csv"), _correlation_csv(corr, ds.schema.feature_names))
    print(f"PCA: {ds.n_rows} rows -> {dims} components, explained variance "
          + ", ".join(f"{v:.4f}" for v in explained) + f" of total {total:.4f}")
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    inputs = cfg.report_inputs or [_out(cfg, "metrics.json")]
    entries = []
    for path in inputs:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        entries.extend(ReportEntry.from_dict(d) for d in doc["entries"])
    print(_write_report(cfg, entries), end="")
    return 0


COMMANDS = {
    "inspect": cmd_inspect,
    "preprocess": cmd_preprocess,
    "tune": cmd_tune,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "visualize": cmd_visualize,
    "report": cmd_report,
}


def _parse_override(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diabnet", description="BPNN diabetes-diagnosis pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration JSON")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--output-dir", help="override output_dir")
        p.add_argument("--set", dest="overrides", action="append", type=_parse_override, default=[],
                       metavar="KEY=VALUE", help="override a config field, e.g. train.epochs=50")
        if name in ("train", "evaluate"):
            p.add_argument("--model", help="model JSON path (default: <output_dir>/model.json)")
        if name == "train":
            p.add_argument("--best-config", help="take hyperparameters from a tune best_config.json")
        if name == "tune":
            p.add_argument("--quiet", action="store_true", help="suppress per-configuration progress lines")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    try:
        cfg = load_config(args.config, overrides)
        if args.output_dir:
            cfg.output_dir = Path(args.output_dir)
        return COMMANDS[args.command](cfg, args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
    except (DiabnetError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
