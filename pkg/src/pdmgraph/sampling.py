"""Labelled-dataset construction and class balancing.

Rows are labelled by whether the alarm fires within the next ``horizon``
seconds, inactive periods are thinned by time-bucket undersampling, the
training partition is rebalanced with SMOTE followed by Wilson editing, and
splits are stratified by class.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateClassError,
    EmptyDatasetError,
    InsufficientDataError,
    InsufficientMinorityError,
    InvalidRangeError,
    IoError,
    SchemaError,
    StratificationError,
)
from .ingest import TimeTable, missing_mask
from .serialize import read_json, write_json, write_text
from .stats import check_binary

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 1200


@dataclass
class Standardizer:
    """Per-column z-scoring fitted on one partition and applied to others.

    Only continuous columns are touched. A zero-variance column is centred
    but not rescaled.
    """

    mean: np.ndarray
    scale: np.ndarray
    continuous: np.ndarray

    @classmethod
    def fit(cls, X, continuous) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        continuous = np.asarray(continuous, dtype=bool)
        mean = np.where(continuous, X.mean(axis=0), 0.0) if len(X) else np.zeros(X.shape[1])
        std = X.std(axis=0) if len(X) else np.ones(X.shape[1])
        scale = np.where(continuous & (std > 0), std, 1.0)
        return cls(mean, scale, continuous)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def to_json(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "scale": [float(v) for v in self.scale],
            "continuous": [bool(v) for v in self.continuous],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Standardizer":
        return cls(np.array(data["mean"]), np.array(data["scale"]), np.array(data["continuous"], dtype=bool))


@dataclass
class LabeledDataset:
    """Encoded feature matrix with binary labels and per-row timestamps.

    ``groups`` maps each categorical source column to the indices of its
    one-hot columns; ``encoding`` maps it to the level names in column order.
    """

    X: np.ndarray
    y: np.ndarray
    timestamps: np.ndarray
    feature_names: list
    continuous: np.ndarray
    groups: dict = field(default_factory=dict)
    encoding: dict = field(default_factory=dict)
    standardizer: Standardizer | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.y), -1)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.continuous = np.asarray(self.continuous, dtype=bool)
        if not len(self.X) == len(self.y) == len(self.timestamps):
            raise SchemaError("X, y and timestamps must have the same length")
        if self.X.shape[1] != len(self.feature_names):
            raise SchemaError("feature_names does not match the column count")

    @property
    def n_rows(self) -> int:
        return len(self.y)

    def class_counts(self) -> dict:
        return {0: int(np.sum(self.y == 0)), 1: int(np.sum(self.y == 1))}

    def replace(self, X=None, y=None, timestamps=None, standardizer=None) -> "LabeledDataset":
        return LabeledDataset(
            self.X if X is None else X,
            self.y if y is None else y,
            self.timestamps if timestamps is None else timestamps,
            list(self.feature_names),
            self.continuous.copy(),
            {k: list(v) for k, v in self.groups.items()},
            {k: list(v) for k, v in self.encoding.items()},
            self.standardizer if standardizer is None else standardizer,
        )

    def take(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return self.replace(self.X[rows], self.y[rows], self.timestamps[rows])

    def group_slices(self) -> list:
        return [list(v) for v in self.groups.values()]


def _level_name(value) -> str:
    if isinstance(value, (float, np.floating)) and float(value).is_integer():
        return str(int(value))
    return str(value)


def _sorted_levels(levels) -> list:
    try:
        return sorted(levels, key=float)
    except ValueError:
        return sorted(levels)


def _window_labels(timestamps: np.ndarray, active_times: np.ndarray, horizon: int) -> np.ndarray:
    if len(active_times) == 0:
        return np.zeros(len(timestamps), dtype=np.int64)
    # first active instant strictly after t, then test it against t + horizon
    idx = np.searchsorted(active_times, timestamps, side="right")
    found = idx < len(active_times)
    nxt = np.where(found, active_times[np.minimum(idx, len(active_times) - 1)], 0)
    return (found & (nxt <= timestamps + horizon)).astype(np.int64)


def shift_labels(table: TimeTable, target: str, features=None, horizon: int = DEFAULT_HORIZON) -> LabeledDataset:
    """Label each row 1 iff ``target`` is active at some instant in (t, t + horizon].

    Rows whose window runs past the last timestamp are dropped. Categorical
    features (per ``table.schema``) are one-hot encoded as ``column=level``;
    everything else is passed through as a continuous column.
    """
    if target not in table.columns:
        raise SchemaError(f"unknown target column {target!r}")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    ts = table.timestamps
    if table.n_rows == 0 or horizon >= ts[-1] - ts[0]:
        raise EmptyDatasetError(f"horizon {horizon}s leaves no rows with a complete window")
    features = [c for c in (features if features is not None else table.names) if c != target]
    active = check_binary(table.columns[target], target) == 1
    y = _window_labels(ts, ts[active], horizon)
    keep = ts + horizon <= ts[-1]

    blocks, names, continuous, groups, encoding = [], [], [], {}, {}
    for col in features:
        values = table.columns[col][keep]
        if missing_mask(values).any():
            raise InsufficientDataError(f"column {col!r} has missing cells; impute before labelling")
        kind = table.schema.get(col)
        if kind is not None and kind.is_categorical or values.dtype == object:
            levels = _sorted_levels({_level_name(v) for v in values})
            as_text = np.array([_level_name(v) for v in values], dtype=object)
            groups[col] = list(range(len(names), len(names) + len(levels)))
            encoding[col] = levels
            for lev in levels:
                blocks.append((as_text == lev).astype(float))
                names.append(f"{col}={lev}")
                continuous.append(False)
        else:
            blocks.append(values.astype(float))
            names.append(col)
            continuous.append(True)
    X = np.column_stack(blocks) if blocks else np.zeros((int(keep.sum()), 0))
    return LabeledDataset(X, y[keep], ts[keep], names, np.array(continuous, dtype=bool), groups, encoding)


def standardize(train: LabeledDataset, *others: LabeledDataset):
    """Fit z-scoring on ``train`` and apply it to ``train`` and every other partition."""
    scaler = Standardizer.fit(train.X, train.continuous)
    out = [train.replace(X=scaler.transform(train.X), standardizer=scaler)]
    out += [d.replace(X=scaler.transform(d.X), standardizer=scaler) for d in others]
    return out if others else out[0]


# time-bucket undersampling


def _buckets(timestamps: np.ndarray, interval: int, anchor: int) -> np.ndarray:
    return (timestamps - anchor) // int(interval)


def undersampled_count(data: LabeledDataset, interval: int, num_sample: int = 1) -> int:
    """Label-0 rows that survive ``time_interval_undersample`` (seed-independent)."""
    if interval <= 0:
        raise ValueError("interval must be positive")
    if data.n_rows == 0:
        return 0
    zeros = data.timestamps[data.y == 0]
    _, sizes = np.unique(_buckets(zeros, interval, data.timestamps[0]), return_counts=True)
    return int(np.minimum(sizes, num_sample).sum())


def time_interval_undersample(data: LabeledDataset, interval: int, num_sample: int = 1, seed=0) -> LabeledDataset:
    """Keep every label-1 row and at most ``num_sample`` label-0 rows per time bucket.

    Buckets are ``interval`` seconds wide, anchored at the first timestamp.
    A bucket with no more than ``num_sample`` rows is kept whole.
    """
    if interval <= 0:
        raise ValueError("interval must be positive")
    if num_sample < 1:
        raise ValueError("num_sample must be positive")
    if data.n_rows == 0:
        return data
    rng = np.random.default_rng(seed)
    zero_idx = np.flatnonzero(data.y == 0)
    bucket = _buckets(data.timestamps[zero_idx], interval, data.timestamps[0])
    order = np.lexsort((zero_idx, bucket))
    zero_idx, bucket = zero_idx[order], bucket[order]
    kept = [np.flatnonzero(data.y == 1)]
    for rows in np.split(zero_idx, np.flatnonzero(np.diff(bucket)) + 1):
        if len(rows) <= num_sample:
            kept.append(rows)
        else:
            kept.append(np.sort(rng.choice(rows, size=num_sample, replace=False)))
    idx = np.concatenate(kept)
    idx = idx[np.lexsort((idx, data.timestamps[idx]))]
    return data.take(idx)


@dataclass
class IntervalSearch:
    interval: int
    feasible: bool
    target_size: int
    trace: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "interval": self.interval,
            "feasible": self.feasible,
            "target_size": self.target_size,
            "trace": self.trace,
        }


def find_optimal_interval(
    data: LabeledDataset,
    target_size: int | None = None,
    min_interval: int = 1,
    max_interval: int | None = None,
    num_sample: int = 1,
) -> IntervalSearch:
    """Binary search for the largest integer interval whose undersampling keeps
    at least ``target_size`` label-0 rows.

    ``target_size`` defaults to the number of label-1 rows; ``max_interval``
    defaults to the data span. When no interval qualifies the result is
    ``max_interval`` with ``feasible`` false.
    """
    if max_interval is None:
        max_interval = max(int(data.timestamps[-1] - data.timestamps[0]), 1) if data.n_rows else 1
    if min_interval > max_interval:
        raise InvalidRangeError(f"min_interval {min_interval} > max_interval {max_interval}")
    if min_interval < 1:
        raise InvalidRangeError("intervals must be at least 1 second")
    if target_size is None:
        target_size = int(np.sum(data.y == 1))
    left, right = int(min_interval), int(max_interval)
    best, feasible, trace = int(max_interval), False, []
    while left <= right:
        mid = (left + right) // 2
        size = undersampled_count(data, mid, num_sample)
        trace.append({"interval": mid, "size": size})
        if size >= target_size:
            best, feasible = mid, True
            left = mid + 1
        else:
            right = mid - 1
    if not feasible:
        logger.warning("no interval in [%d, %d] keeps %d label-0 rows; using %d", min_interval, max_interval, target_size, best)
    return IntervalSearch(best, feasible, int(target_size), trace)


# SMOTE / ENN


def _minority_label(y: np.ndarray) -> int:
    n0, n1 = int(np.sum(y == 0)), int(np.sum(y == 1))
    return 0 if n0 < n1 else 1


def _neighbours(points: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest other points for every point (self excluded)."""
    _, idx = cKDTree(points).query(points, k=k + 1)
    idx = np.asarray(idx).reshape(len(points), k + 1)
    out = np.empty((len(points), k), dtype=np.int64)
    for i, row in enumerate(idx):
        others = row[row != i]
        out[i] = others[:k]
    return out


def smote_samples(minority: np.ndarray, k_neighbors: int, n_new: int, rng):
    """Interpolate ``n_new`` points between minority rows and random k-NN partners.

    Returns (points, base index, partner index).
    """
    nn = _neighbours(minority, k_neighbors)
    base = rng.integers(len(minority), size=n_new)
    partner = nn[base, rng.integers(k_neighbors, size=n_new)]
    u = rng.random(n_new)
    points = minority[base] + u[:, None] * (minority[partner] - minority[base])
    return points, base, partner


def snap_one_hot(X: np.ndarray, groups) -> np.ndarray:
    """Set each one-hot group to the vertex of its largest coordinate."""
    X = X.copy()
    for cols in groups:
        cols = np.asarray(cols, dtype=np.int64)
        if len(cols) == 0:
            continue
        block = np.zeros((len(X), len(cols)))
        block[np.arange(len(X)), np.argmax(X[:, cols], axis=1)] = 1.0
        X[:, cols] = block
    return X


def smote(X, y, k_neighbors: int = 5, ratio: float = 1.0, seed=0, groups=()):
    """Oversample the minority class to ``ceil(ratio * majority)`` rows."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    minority = _minority_label(y)
    Xmin = X[y == minority]
    n_maj = int(np.sum(y != minority))
    if len(Xmin) == 0 or len(Xmin) <= k_neighbors:
        raise InsufficientMinorityError(
            f"minority class {minority} has {len(Xmin)} rows; need more than k_neighbors={k_neighbors}"
        )
    n_new = max(0, math.ceil(ratio * n_maj) - len(Xmin))
    if n_new == 0:
        return X.copy(), y.copy()
    points, _, _ = smote_samples(Xmin, k_neighbors, n_new, np.random.default_rng(seed))
    if groups:
        points = snap_one_hot(points, groups)
    return np.vstack([X, points]), np.concatenate([y, np.full(n_new, minority, dtype=np.int64)])


def enn_keep_mask(X, y, n_neighbors: int = 3) -> np.ndarray:
    """Wilson editing: keep a point unless most of its neighbours carry the other label.

    An even split among neighbours keeps the point.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if len(X) <= n_neighbors:
        raise InsufficientDataError(f"need more than {n_neighbors} rows for editing, got {len(X)}")
    nn = _neighbours(X, n_neighbors)
    disagree = (y[nn] != y[:, None]).sum(axis=1)
    return ~(2 * disagree > n_neighbors)


def enn(X, y, n_neighbors: int = 3):
    keep = enn_keep_mask(X, y, n_neighbors)
    y = np.asarray(y, dtype=np.int64)
    for label in np.unique(y):
        if not keep[y == label].any():
            raise DegenerateClassError(f"editing removed every row of class {label}")
    return np.asarray(X, dtype=float)[keep], y[keep]


def _counts(y) -> dict:
    y = np.asarray(y)
    return {"0": int(np.sum(y == 0)), "1": int(np.sum(y == 1))}


def smoteenn(X, y, k_neighbors: int = 5, enn_n_neighbors: int = 3, seed=0, ratio: float = 1.0, groups=()):
    """SMOTE then ENN. Returns (X, y, counts) with class counts at each step."""
    counts = {"before": _counts(y)}
    Xs, ys = smote(X, y, k_neighbors, ratio, seed, groups)
    counts["after_smote"] = _counts(ys)
    Xe, ye = enn(Xs, ys, enn_n_neighbors)
    counts["after_enn"] = _counts(ye)
    logger.info("class counts %s", counts)
    return Xe, ye, counts


def balance_dataset(data: LabeledDataset, k_neighbors: int = 5, enn_n_neighbors: int = 3, seed=0, ratio: float = 1.0):
    """SMOTEENN on a LabeledDataset. Synthetic rows carry timestamp -1.

    Returns (balanced dataset, class counts at each step).
    """
    counts = {"before": _counts(data.y)}
    X, y = smote(data.X, data.y, k_neighbors, ratio, seed, data.group_slices())
    ts = np.concatenate([data.timestamps, np.full(len(y) - data.n_rows, -1, dtype=np.int64)])
    counts["after_smote"] = _counts(y)
    keep = enn_keep_mask(X, y, enn_n_neighbors)
    for label in np.unique(y):
        if not keep[y == label].any():
            raise DegenerateClassError(f"editing removed every row of class {label}")
    counts["after_enn"] = _counts(y[keep])
    logger.info("class counts %s", counts)
    return data.replace(X[keep], y[keep], ts[keep]), counts


def stratified_split(y, train_fraction: float = 0.7, seed=0):
    """Per-class shuffled split; class c puts round_half_up(fraction * n_c) rows in train.

    Returns sorted (train indices, test indices).
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for label in np.unique(y):
        rows = np.flatnonzero(y == label)
        if len(rows) < 2:
            raise StratificationError(f"class {label} has {len(rows)} member(s); need at least 2")
        n_train = int(math.floor(len(rows) * train_fraction + 0.5 + 1e-9))
        rows = rng.permutation(rows)
        train.append(rows[:n_train])
        test.append(rows[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split_dataset(data: LabeledDataset, train_fraction: float = 0.7, seed=0):
    tr, te = stratified_split(data.y, train_fraction, seed)
    return data.take(tr), data.take(te)


@dataclass
class SamplingReport:
    original_counts: dict
    undersampled_counts: dict
    balanced_counts: dict
    interval: int
    feasible: bool
    trace: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "original_counts": self.original_counts,
            "undersampled_counts": self.undersampled_counts,
            "balanced_counts": self.balanced_counts,
            "interval": self.interval,
            "feasible": self.feasible,
            "trace": self.trace,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SamplingReport":
        return cls(**data)


# persistence


def _matrix_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def save_dataset(data: LabeledDataset, directory, stem: str, report: SamplingReport | None = None) -> list:
    """Write ``stem``_features.csv, ``stem``_labels.csv and ``stem``.json; return the paths."""
    directory = Path(directory)
    feats = directory / f"{stem}_features.csv"
    labels = directory / f"{stem}_labels.csv"
    side = directory / f"{stem}.json"
    write_text(
        feats,
        _matrix_csv(["timestamp", *data.feature_names], ([int(t), *map(repr, map(float, row))] for t, row in zip(data.timestamps, data.X))),
    )
    write_text(labels, _matrix_csv(["timestamp", "label"], ([int(t), int(v)] for t, v in zip(data.timestamps, data.y))))
    write_json(
        side,
        {
            "feature_names": data.feature_names,
            "continuous": [bool(v) for v in data.continuous],
            "groups": data.groups,
            "encoding": data.encoding,
            "standardizer": data.standardizer.to_json() if data.standardizer else None,
            "report": report.to_json() if report else None,
        },
    )
    return [feats, labels, side]


def load_dataset(directory, stem: str) -> LabeledDataset:
    directory = Path(directory)
    meta = read_json(directory / f"{stem}.json")
    try:
        with open(directory / f"{stem}_features.csv", newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))[1:]
        with open(directory / f"{stem}_labels.csv", newline="", encoding="utf-8") as fh:
            labels = list(csv.reader(fh))[1:]
    except OSError as exc:
        raise IoError(f"cannot read dataset {stem!r} in {directory}: {exc}") from exc
    d = len(meta["feature_names"])
    ts = np.array([int(r[0]) for r in rows], dtype=np.int64)
    X = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float).reshape(len(rows), d)
    y = np.array([int(r[1]) for r in labels], dtype=np.int64)
    scaler = Standardizer.from_json(meta["standardizer"]) if meta["standardizer"] else None
    return LabeledDataset(X, y, ts, meta["feature_names"], meta["continuous"], meta["groups"], meta["encoding"], scaler)
