"""Dataset ingestion, imputation, balancing, scaling, splitting and PCA."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateColumnError,
    DimensionError,
    FoldError,
    ImbalanceError,
    LabelError,
    ParseError,
    SchemaError,
    ShapeError,
    SplitError,
)
from .numerics import Rng, column_stats, fmt17, matmul, transpose

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class Schema:
    feature_names: tuple[str, ...]
    target_name: str
    positive_label: str = "1"
    # When None any single token other than positive_label is the negative class.
    negative_label: str | None = None
    zero_as_missing: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "zero_as_missing", tuple(self.zero_as_missing))
        if not self.feature_names:
            raise SchemaError("schema needs at least one feature")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise SchemaError("duplicate feature names in schema")
        if self.target_name in self.feature_names:
            raise SchemaError(f"target {self.target_name!r} is also listed as a feature")
        unknown = [c for c in self.zero_as_missing if c not in self.feature_names]
        if unknown:
            raise SchemaError(f"zero_as_missing names unknown features: {unknown}")

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        allowed = {"feature_names", "target_name", "positive_label", "negative_label", "zero_as_missing"}
        extra = set(d) - allowed
        if extra:
            raise SchemaError(f"unknown schema keys: {sorted(extra)}")
        missing = {"feature_names", "target_name"} - set(d)
        if missing:
            raise SchemaError(f"schema is missing {sorted(missing)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "target_name": self.target_name,
            "positive_label": self.positive_label,
            "negative_label": self.negative_label,
            "zero_as_missing": list(self.zero_as_missing),
        }


PIMA_SCHEMA = Schema(
    feature_names=(
        "Pregnancies",
        "Glucose",
        "BloodPressure",
        "SkinThickness",
        "Insulin",
        "BMI",
        "DiabetesPedigreeFunction",
        "Age",
    ),
    target_name="Outcome",
    positive_label="1",
    negative_label="0",
    zero_as_missing=("Glucose", "BloodPressure", "SkinThickness", "Insulin", "BMI"),
)


@dataclass
class Dataset:
    """Feature matrix, 0/1 labels and the schema they came from.

    ``row_ids`` carries each row's position in the originally loaded file
    through every resampling step, so partitions can be audited.
    """

    features: np.ndarray
    labels: np.ndarray
    schema: Schema
    row_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64).reshape(-1, len(self.schema.feature_names))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.row_ids is None:
            self.row_ids = np.arange(len(self.labels), dtype=np.int64)
        self.row_ids = np.asarray(self.row_ids, dtype=np.int64)
        if self.features.shape[0] != len(self.labels) or len(self.row_ids) != len(self.labels):
            raise ShapeError(
                f"{self.features.shape[0]} feature rows, {len(self.labels)} labels, {len(self.row_ids)} row ids"
            )
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise LabelError("labels must be 0 or 1")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> tuple[int, int]:
        n_pos = int(self.labels.sum())
        return self.n_rows - n_pos, n_pos

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.schema, self.row_ids[idx])

    def with_features(self, features) -> "Dataset":
        return Dataset(features, self.labels.copy(), self.schema, self.row_ids.copy())


def load_csv(path, schema: Schema) -> Dataset:
    """Read a header-first CSV, selecting and ordering columns by ``schema``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: file is empty (no header row)") from None
        wanted = list(schema.feature_names) + [schema.target_name]
        missing = [name for name in wanted if name not in header]
        if missing:
            raise SchemaError(f"{path}: header lacks columns {missing}")
        cols = [header.index(name) for name in schema.feature_names]
        target_col = header.index(schema.target_name)

        rows, tokens = [], []
        for line_no, record in enumerate(reader, start=2):
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) != len(header):
                raise SchemaError(f"{path}: row {line_no} has {len(record)} cells, header has {len(header)}")
            values = []
            for name, c in zip(schema.feature_names, cols):
                cell = record[c].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(line_no, name, cell, path) from None
                if not math.isfinite(v):
                    raise ParseError(line_no, name, cell, path)
                values.append(v)
            rows.append(values)
            tokens.append((line_no, record[target_col].strip()))

    labels = _map_labels(tokens, schema, path)
    features = np.array(rows, dtype=np.float64).reshape(len(rows), len(schema.feature_names))
    return Dataset(features, labels, schema)


def _map_labels(tokens, schema: Schema, path) -> np.ndarray:
    labels = np.zeros(len(tokens), dtype=np.int64)
    negative = schema.negative_label
    for i, (line_no, tok) in enumerate(tokens):
        if tok == schema.positive_label:
            labels[i] = 1
        elif negative is None:
            negative = tok
        elif tok != negative:
            raise LabelError(
                f"{path}: row {line_no}: target token {tok!r} is neither "
                f"{schema.positive_label!r} nor {negative!r}"
            )
    return labels


@dataclass
class ImputeParams:
    fill_values: dict[str, float]

    def to_dict(self) -> dict:
        return {"fill_values": {k: float(v) for k, v in self.fill_values.items()}}


def impute_missing(ds: Dataset, params: ImputeParams | None = None) -> tuple[Dataset, ImputeParams]:
    """Replace zeros in ``schema.zero_as_missing`` columns by the mean of nonzero values.

    Without ``params`` the means are fitted on ``ds`` (the training set);
    pass the returned params to apply the same fill to held-out data.
    """
    names = ds.schema.feature_names
    if params is None:
        fills = {}
        for name in ds.schema.zero_as_missing:
            col = ds.features[:, names.index(name)]
            present = col[col != 0.0]
            if present.size == 0:
                raise DegenerateColumnError(name, f"column {name!r} has no nonzero values to impute from")
            fills[name] = float(present.mean())
        params = ImputeParams(fills)
    if not params.fill_values:
        return ds, params
    x = ds.features.copy()
    for name, fill in params.fill_values.items():
        col = x[:, names.index(name)]
        col[col == 0.0] = fill
    return ds.with_features(x), params


def undersample(ds: Dataset, rng: Rng) -> Dataset:
    """Shrink the majority class to the minority size by sampling without replacement."""
    neg = np.flatnonzero(ds.labels == 0)
    pos = np.flatnonzero(ds.labels == 1)
    if len(neg) == 0 or len(pos) == 0:
        raise ImbalanceError(f"undersampling needs both classes, got {len(neg)} negative / {len(pos)} positive")
    if len(neg) > len(pos):
        neg = np.sort(neg[rng.sample(len(neg), len(pos))])
    elif len(pos) > len(neg):
        pos = np.sort(pos[rng.sample(len(pos), len(neg))])
    keep = np.concatenate([neg, pos])
    return ds.take(keep[rng.permutation(len(keep))])


@dataclass
class ScalerParams:
    means: np.ndarray
    stds: np.ndarray

    def to_dict(self) -> dict:
        return {"means": [float(v) for v in self.means], "stds": [float(v) for v in self.stds]}


def fit_standardizer(train: Dataset) -> ScalerParams:
    if train.n_rows < 2:
        raise DimensionError(f"standardizer needs at least 2 rows, got {train.n_rows}")
    means, stds = column_stats(train.features)
    for name, s in zip(train.schema.feature_names, stds):
        if s == 0.0:
            raise DegenerateColumnError(name, f"feature {name!r} is constant; cannot standardize")
    return ScalerParams(means, stds)


def apply_standardizer(ds: Dataset, params: ScalerParams) -> Dataset:
    if ds.n_features != len(params.means):
        raise ShapeError(f"dataset has {ds.n_features} features, scaler was fitted on {len(params.means)}")
    return ds.with_features((ds.features - params.means) / params.stds)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def holdout_split(ds: Dataset, test_fraction: float = 0.2, rng: Rng | None = None) -> tuple[Dataset, Dataset]:
    """Stratified train/test split; each class sends round(count * fraction) rows to test."""
    if not 0.0 < test_fraction < 1.0:
        raise SplitError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if rng is None:
        rng = Rng(0)
    train_idx, test_idx = [], []
    for cls in (0, 1):
        members = np.flatnonzero(ds.labels == cls)
        count = len(members)
        if count == 0:
            continue
        n_test = _round_half_up(count * test_fraction)
        if count < 2 or not 1 <= n_test <= count - 1:
            raise SplitError(
                f"class {cls} has {count} rows; cannot place {n_test} in test and keep both sides non-empty"
            )
        shuffled = members[rng.permutation(count)]
        test_idx.append(shuffled[:n_test])
        train_idx.append(shuffled[n_test:])
    train_idx = np.sort(np.concatenate(train_idx)) if train_idx else np.zeros(0, dtype=np.int64)
    test_idx = np.sort(np.concatenate(test_idx)) if test_idx else np.zeros(0, dtype=np.int64)
    return ds.take(train_idx), ds.take(test_idx)


@dataclass
class FoldPlan:
    k: int
    assignments: np.ndarray

    def fold_indices(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """(training rows, validation rows) for ``fold``."""
        val = self.assignments == fold
        return np.flatnonzero(~val), np.flatnonzero(val)

    def sizes(self) -> list[int]:
        return [int(np.sum(self.assignments == f)) for f in range(self.k)]


def kfold_plan(ds: Dataset, k: int = 5, rng: Rng | None = None) -> FoldPlan:
    """Stratified fold assignment.

    Each class is shuffled and dealt round-robin onto the folds; the deal
    for the positive class continues where the negative class stopped, so
    the leftover rows of both classes land on different folds.
    """
    if k < 2:
        raise FoldError(f"k must be at least 2, got {k}")
    if rng is None:
        rng = Rng(0)
    assignments = np.full(ds.n_rows, -1, dtype=np.int64)
    offset = 0
    for cls in (0, 1):
        members = np.flatnonzero(ds.labels == cls)
        if len(members) == 0:
            continue
        if len(members) < k:
            raise FoldError(f"class {cls} has {len(members)} rows, fewer than k={k}")
        shuffled = members[rng.permutation(len(members))]
        assignments[shuffled] = (offset + np.arange(len(members))) % k
        offset += len(members)
    return FoldPlan(k, assignments)


def covariance(x: np.ndarray) -> np.ndarray:
    """Population covariance of the columns of ``x``."""
    centered = x - x.mean(axis=0)
    c = matmul(transpose(centered), centered) / x.shape[0]
    return 0.5 * (c + c.T)


def jacobi_eigh(sym: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps over every upper-triangle pair in row order, annihilating each
    off-diagonal entry, until the off-diagonal Frobenius norm drops below
    ``tol`` (relative to the matrix norm when that exceeds 1).

    Returns eigenvalues in descending order and the matching eigenvectors
    as columns.
    """
    a = np.array(sym, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ShapeError(f"jacobi_eigh expects a square matrix, got {a.shape}")
    v = np.eye(n)
    scale = max(1.0, float(np.linalg.norm(a)))
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.triu(a, 1) ** 2)) * 2.0)
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    return values[order], v[:, order]


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for j in range(out.shape[1]):
        i = int(np.argmax(np.abs(out[:, j])))
        if out[i, j] < 0:
            out[:, j] = -out[:, j]
    return out


def pca_fit_project(ds: Dataset | np.ndarray, dims: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Project onto the top ``dims`` principal axes of the feature covariance.

    Returns the (n, dims) projection of the centred data and the matching
    eigenvalues (explained variance, population convention), descending.
    Each axis is oriented so its largest-magnitude loading is positive.
    """
    x = ds.features if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.float64)
    d = x.shape[1]
    if not 1 <= dims <= d:
        raise DimensionError(f"dims must lie in [1, {d}], got {dims}")
    values, vectors = jacobi_eigh(covariance(x))
    # tiny negative eigenvalues are rounding noise on a PSD matrix
    values = np.maximum(values, 0.0)
    axes = _fix_signs(vectors[:, :dims])
    return matmul(x - x.mean(axis=0), axes), values[:dims]


def matrix_to_csv(matrix: np.ndarray, header, extra_columns=None) -> str:
    """Render a matrix as CSV text with 17-significant-digit floats."""
    lines = [",".join(header)]
    for i, row in enumerate(np.asarray(matrix)):
        cells = [fmt17(v) for v in row]
        if extra_columns is not None:
            cells.extend(str(col[i]) for col in extra_columns)
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def dataset_to_csv(ds: Dataset) -> str:
    header = ["row_id", *ds.schema.feature_names, ds.schema.target_name]
    lines = [",".join(header)]
    for rid, row, label in zip(ds.row_ids, ds.features, ds.labels):
        lines.append(",".join([str(int(rid)), *(fmt17(v) for v in row), str(int(label))]))
    return "\n".join(lines) + "\n"

