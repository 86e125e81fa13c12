"""Confusion-matrix metrics and comparison reports.

A metric whose denominator is zero is ``None`` (rendered ``-``), never NaN.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import EmptyInputError, ShapeError

UNDEFINED = None
METRIC_NAMES = ("accuracy", "sensitivity", "specificity")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Metrics:
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None

    def as_tuple(self):
        return (self.accuracy, self.sensitivity, self.specificity)

    def to_dict(self) -> dict:
        return dict(zip(METRIC_NAMES, self.as_tuple()))


def confusion(predictions, labels) -> ConfusionMatrix:
    """Counts with class 1 as the positive class."""
    p = np.asarray(predictions, dtype=np.int64).reshape(-1)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if p.shape != y.shape:
        raise ShapeError(f"{len(p)} predictions but {len(y)} labels")
    for name, v in (("predictions", p), ("labels", y)):
        if not np.all((v == 0) | (v == 1)):
            raise ValueError(f"{name} must contain only 0 and 1")
    return ConfusionMatrix(
        tp=int(np.sum((p == 1) & (y == 1))),
        fp=int(np.sum((p == 1) & (y == 0))),
        tn=int(np.sum((p == 0) & (y == 0))),
        fn=int(np.sum((p == 0) & (y == 1))),
    )


def _ratio(num: int, den: int):
    return num / den if den else UNDEFINED


def metrics(cm: ConfusionMatrix) -> Metrics:
    if cm.total == 0:
        raise EmptyInputError("no samples in confusion matrix")
    return Metrics(
        accuracy=(cm.tp + cm.tn) / cm.total,
        sensitivity=_ratio(cm.tp, cm.tp + cm.fn),
        specificity=_ratio(cm.tn, cm.tn + cm.fp),
    )


@dataclass(frozen=True)
class ReportEntry:
    model: str
    dataset: str
    metrics: Metrics
    source: str = "local"
    confusion: ConfusionMatrix | None = None

    def to_dict(self) -> dict:
        d = {"model": self.model, "dataset": self.dataset, "source": self.source, **self.metrics.to_dict()}
        if self.confusion is not None:
            d["confusion"] = {"tp": self.confusion.tp, "fp": self.confusion.fp,
                              "tn": self.confusion.tn, "fn": self.confusion.fn}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReportEntry":
        cm = d.get("confusion")
        return cls(
            model=d["model"],
            dataset=d["dataset"],
            metrics=Metrics(d["accuracy"], d["sensitivity"], d["specificity"]),
            source=d.get("source", "local"),
            confusion=ConfusionMatrix(**cm) if cm else None,
        )


def reference_rows() -> list[ReportEntry]:
    """Literature results shipped with the package, labelled ``reported``."""
    doc = json.loads(resources.files("diabnet").joinpath("reference_results.json").read_text(encoding="utf-8"))
    rows = []
    for row in doc["rows"]:
        for dataset, triple in row["results"].items():
            rows.append(ReportEntry(row["model"], dataset, Metrics(*triple), source="reported"))
    return rows


def reference_dataset_labels() -> dict:
    doc = json.loads(resources.files("diabnet").joinpath("reference_results.json").read_text(encoding="utf-8"))
    return doc["datasets"]


def _cell(v) -> str:
    return "-" if v is None else f"{v:.4f}"


def _layout(entries):
    datasets, rows = [], {}
    for e in entries:
        if e.dataset not in datasets:
            datasets.append(e.dataset)
        rows.setdefault((e.model, e.source), {})[e.dataset] = e.metrics
    return datasets, rows


def report(entries, reference=()) -> tuple[str, str]:
    """Markdown and CSV comparison tables, one row per (model, source).

    Locally measured rows come first, then the reference rows.  Each
    dataset contributes accuracy, sensitivity and specificity columns;
    cells with no result are ``-``.
    """
    all_entries = [*entries, *reference]
    datasets, rows = _layout(all_entries)
    labels = {"accuracy": "Acc.", "sensitivity": "Sens.", "specificity": "Spec."}

    md_header = ["Method", "Source"] + [f"{d} {labels[m]}" for d in datasets for m in METRIC_NAMES]
    md = ["| " + " | ".join(md_header) + " |", "|" + "|".join("---" for _ in md_header) + "|"]
    csv_lines = [",".join(["model", "source"] + [f"{d}_{m}" for d in datasets for m in METRIC_NAMES])]
    for (model, source), per_ds in rows.items():
        cells = []
        for d in datasets:
            triple = per_ds[d].as_tuple() if d in per_ds else (None, None, None)
            cells.extend(_cell(v) for v in triple)
        md.append("| " + " | ".join([model, source, *cells]) + " |")
        csv_lines.append(",".join([_csv_quote(model), source, *cells]))
    return "\n".join(md) + "\n", "\n".join(csv_lines) + "\n"


def _csv_quote(s: str) -> str:
    if "," in s or '"' in s:
        return '"' + s.replace('"', '""') + '"'
    return s
