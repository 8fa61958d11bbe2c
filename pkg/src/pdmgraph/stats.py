"""Descriptive and association statistics, target relevance, anomaly intervals."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (
    DegenerateTableError,
    EncodingError,
    InsufficientDataError,
    UndefinedFError,
)
from .ingest import TimeTable, missing_mask

PEARSON = "pearson"
CRAMERS_V = "cramers_v"
F_MAX = 1e12


@dataclass
class AssociationMatrix:
    feature_names: list
    values: np.ndarray
    method: str

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "names": list(self.feature_names),
            "rows": [[float(v) for v in row] for row in self.values],
        }

    @classmethod
    def from_json(cls, data: dict) -> "AssociationMatrix":
        return cls(list(data["names"]), np.array(data["rows"], dtype=float).reshape(len(data["names"]), -1), data["method"])

    def __getitem__(self, pair):
        i = self.feature_names.index(pair[0])
        j = self.feature_names.index(pair[1])
        return self.values[i, j]


@dataclass
class TargetRelevance:
    target: str
    scores: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"target": self.target, "scores": {k: float(v) for k, v in self.scores.items()}}

    @classmethod
    def from_json(cls, data: dict) -> "TargetRelevance":
        return cls(data["target"], dict(data["scores"]))


class Interval(NamedTuple):
    start: int
    end: int
    label: str


@dataclass
class IntervalSet:
    intervals: list = field(default_factory=list)

    def __post_init__(self):
        self.intervals = sorted((Interval(*iv) for iv in self.intervals), key=lambda iv: iv.start)

    def __len__(self):
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def to_json(self) -> list:
        return [{"start": int(iv.start), "end": int(iv.end), "label": iv.label} for iv in self.intervals]

    @classmethod
    def from_json(cls, data: list) -> "IntervalSet":
        return cls([Interval(d["start"], d["end"], d["label"]) for d in data])


def pearson(x, y) -> float:
    """Sample Pearson r; 0 when either input has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        raise InsufficientDataError("Pearson correlation needs at least 2 rows")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        return 0.0
    return float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def _numeric_block(table: TimeTable, columns) -> np.ndarray:
    X = np.column_stack([np.asarray(table.columns[c], dtype=float) for c in columns])
    if np.isnan(X).any():
        raise ValueError("association matrices need imputed columns")
    return X


def pearson_matrix(table: TimeTable, columns) -> AssociationMatrix:
    columns = list(columns)
    if table.n_rows < 2:
        raise InsufficientDataError("Pearson correlation needs at least 2 rows")
    X = _numeric_block(table, columns)
    D = X - X.mean(axis=0)
    S = D.T @ D
    ss = np.diag(S)
    p = len(columns)
    R = np.eye(p)
    for i in range(p):
        for j in range(i + 1, p):
            if ss[i] == 0 or ss[j] == 0:
                r = 0.0
            else:
                r = float(np.clip(S[i, j] / np.sqrt(ss[i] * ss[j]), -1.0, 1.0))
            R[i, j] = R[j, i] = r
    return AssociationMatrix(columns, R, PEARSON)


def contingency(a, b) -> np.ndarray:
    _, ia = np.unique(np.asarray(a), return_inverse=True)
    _, ib = np.unique(np.asarray(b), return_inverse=True)
    ia, ib = ia.ravel(), ib.ravel()
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1)
    return table


def chi_square(table) -> float:
    table = np.asarray(table, dtype=float)
    n = table.sum()
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / n
    return float(((table - expected) ** 2 / expected).sum())


def cramers_v(table) -> float:
    """Cramér's V of an r x k contingency table of counts.

    Rows or columns with a zero margin are dropped first.
    """
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or (table < 0).any():
        raise ValueError("contingency table must be a 2-D array of non-negative counts")
    table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
    r, k = table.shape
    if r < 2 or k < 2:
        raise DegenerateTableError(f"contingency table reduces to {r}x{k}; need at least 2x2")
    n = table.sum()
    v = np.sqrt(chi_square(table) / n / min(k - 1, r - 1))
    return float(min(max(v, 0.0), 1.0))


def _categorical_values(table: TimeTable, name: str) -> np.ndarray:
    values = table.columns[name]
    if missing_mask(values).any():
        raise ValueError(f"column {name!r} has missing cells; impute first")
    if values.dtype == object:
        return np.array([str(v) for v in values])
    return values


def cramers_v_matrix(table: TimeTable, columns) -> AssociationMatrix:
    columns = list(columns)
    cols = [_categorical_values(table, c) for c in columns]
    p = len(columns)
    V = np.eye(p)
    for i in range(p):
        for j in range(i + 1, p):
            V[i, j] = V[j, i] = cramers_v(contingency(cols[i], cols[j]))
    return AssociationMatrix(columns, V, CRAMERS_V)


def _anova_numeric(x: np.ndarray, labels: np.ndarray, f_max: float) -> float:
    groups = np.unique(labels)
    g, n = len(groups), len(x)
    if g < 2:
        raise UndefinedFError("ANOVA needs at least two groups")
    if n <= g:
        raise UndefinedFError(f"ANOVA needs more observations ({n}) than groups ({g})")
    grand = x.mean()
    ssb = ssw = 0.0
    for lab in groups:
        xg = x[labels == lab]
        mg = xg.mean()
        ssb += len(xg) * (mg - grand) ** 2
        ssw += np.sum((xg - mg) ** 2)
    sst = np.sum((x - grand) ** 2)
    if ssw <= 1e-14 * sst or ssw == 0:
        return f_max if ssb > 0 else 0.0
    return float(min((ssb / (g - 1)) / (ssw / (n - g)), f_max))


def anova_f(values, groups, categorical: bool = False, f_max: float = F_MAX) -> float:
    """One-way ANOVA F of ``values`` grouped by ``groups``.

    Categorical features are one-hot encoded and the largest indicator F is
    returned. Zero within-group variance gives ``f_max`` (or 0 when the group
    means are equal too).
    """
    labels = np.asarray(groups)
    if categorical:
        vals = np.asarray(values)
        levels = np.unique(vals)
        if len(np.unique(labels)) < 2:
            raise UndefinedFError("ANOVA needs at least two groups")
        return max(_anova_numeric((vals == lev).astype(float), labels, f_max) for lev in levels)
    return _anova_numeric(np.asarray(values, dtype=float), labels, f_max)


def target_relevance(table: TimeTable, target: str, features, schema=None, f_max: float = F_MAX) -> TargetRelevance:
    schema = schema or table.schema
    labels = np.asarray(table.columns[target])
    scores = {}
    for name in features:
        kind = schema.get(name)
        categorical = bool(kind is not None and kind.is_categorical)
        values = _categorical_values(table, name) if categorical else table.columns[name]
        scores[name] = anova_f(values, labels, categorical=categorical, f_max=f_max)
    return TargetRelevance(target, scores)


def _runs(mask: np.ndarray):
    """(first, last) index pairs of maximal True runs."""
    if not mask.any():
        return []
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return list(zip(starts, ends))


def zscores(values) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    std = x.std()
    if std == 0:
        return np.zeros_like(x)
    return (x - x.mean()) / std


def zscore_anomalies(timestamps, values, threshold: float = 3.0, label: str = "anomaly") -> IntervalSet:
    """Intervals of consecutive rows with |z| >= threshold (population std).

    The boundary is inclusive: a lone spike in ten samples sits at exactly z = 3.
    """
    ts = np.asarray(timestamps)
    z = zscores(values)
    return IntervalSet([Interval(int(ts[a]), int(ts[b]), label) for a, b in _runs(np.abs(z) >= threshold)])


def check_binary(values, name: str = "target") -> np.ndarray:
    v = np.asarray(values)
    if v.dtype == object:
        bad = sorted({str(x) for x in v if x not in (0, 1, "0", "1")})
    else:
        bad = sorted({float(x) for x in v[~np.isin(v, (0, 1))]}, key=str)
    if bad:
        raise EncodingError(name, bad)
    return np.array([int(x) for x in v], dtype=np.int64) if v.dtype == object else v.astype(np.int64)


def alarm_active_intervals(table: TimeTable, target: str, min_duration: int = 5, cadence: int = 1) -> IntervalSet:
    """Maximal runs of active rows lasting at least ``min_duration`` seconds.

    A run covering rows stamped t0..t1 lasts ``t1 - t0 + cadence`` seconds,
    so five consecutive 1 Hz samples make a 5 s activation.
    """
    active = check_binary(table.columns[target], target) == 1
    ts = table.timestamps
    out = []
    for a, b in _runs(active):
        if ts[b] - ts[a] + cadence >= min_duration:
            out.append(Interval(int(ts[a]), int(ts[b]), f"alarm:{target}"))
    return IntervalSet(out)


def anomaly_overlap_report(alarms: IntervalSet, anomalies: dict) -> list:
    """Overlap of each alarm interval with each column's anomaly intervals.

    Rows are ``{alarm_start, alarm_end, column, overlap, fraction}`` sorted by
    descending fraction (stable on alarm start, then column name).
    """
    rows = []
    for alarm in alarms:
        length = alarm.end - alarm.start
        for column in sorted(anomalies):
            overlap = 0
            touched = False
            for iv in anomalies[column]:
                lo, hi = max(alarm.start, iv.start), min(alarm.end, iv.end)
                if hi >= lo:
                    overlap += hi - lo
                    touched = True
            if length > 0:
                fraction = overlap / length
            else:
                fraction = 1.0 if touched else 0.0
            rows.append(
                {
                    "alarm_start": int(alarm.start),
                    "alarm_end": int(alarm.end),
                    "column": column,
                    "overlap": int(overlap),
                    "fraction": float(fraction),
                }
            )
    rows.sort(key=lambda r: -r["fraction"])
    return rows


def overlap_report_csv(rows) -> str:
    buf = io.StringIO()
    fields = ["alarm_start", "alarm_end", "column", "overlap", "fraction"]
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({**r, "fraction": repr(r["fraction"])})
    return buf.getvalue()
