"""Parsing, typing, cleaning and imputation of timestamped telemetry tables."""
from __future__ import annotations

import calendar
import csv
import fnmatch
import io
import logging
import operator
import os
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    IoError,
    DegenerateDatasetError,
    EmptyInputError,
    FormatError,
    SchemaError,
    UntypeableColumnError,
)

logger = logging.getLogger(__name__)

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"

_INT_RE = re.compile(r"^[+-]?\d+$")
_ISO_FMT = "%Y-%m-%dT%H:%M:%S"


@dataclass(frozen=True)
class FeatureKind:
    kind: str
    cardinality: int | None = None

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


@dataclass(frozen=True)
class ColumnSummary:
    mean: float
    std: float
    min: float
    max: float
    median: float
    skew_direction: str  # "left" | "right" | "symmetric"


@dataclass
class TimeTable:
    """Column store keyed by name, plus one integer-seconds timestamp vector.

    Numeric columns are float64 arrays with NaN as the missing marker;
    textual columns are object arrays with None as the missing marker.
    """

    timestamps: np.ndarray
    columns: dict
    schema: dict = field(default_factory=dict)
    time_name: str = "timestamp"

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        for name, values in self.columns.items():
            if len(values) != len(self.timestamps):
                raise SchemaError(f"column {name!r} has {len(values)} cells, expected {len(self.timestamps)}")

    @property
    def n_rows(self) -> int:
        return len(self.timestamps)

    @property
    def names(self) -> list:
        return list(self.columns)

    def __getitem__(self, name):
        return self.columns[name]

    def missing(self, name) -> np.ndarray:
        return missing_mask(self.columns[name])

    def take(self, rows) -> "TimeTable":
        rows = np.asarray(rows)
        return TimeTable(
            self.timestamps[rows],
            {k: v[rows] for k, v in self.columns.items()},
            dict(self.schema),
            self.time_name,
        )

    def select(self, names) -> "TimeTable":
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise SchemaError(f"unknown columns: {missing}")
        return TimeTable(
            self.timestamps.copy(),
            {n: self.columns[n] for n in names},
            {n: self.schema[n] for n in names if n in self.schema},
            self.time_name,
        )

    def with_schema(self, schema) -> "TimeTable":
        return TimeTable(self.timestamps, dict(self.columns), dict(schema), self.time_name)

    def equals(self, other: "TimeTable") -> bool:
        if self.names != other.names or not np.array_equal(self.timestamps, other.timestamps):
            return False
        for name in self.names:
            a, b = self.columns[name], other.columns[name]
            if a.dtype.kind != b.dtype.kind:
                return False
            if a.dtype == object:
                if list(a) != list(b):
                    return False
            elif not np.array_equal(a, b, equal_nan=True):
                return False
        return True


def missing_mask(values: np.ndarray) -> np.ndarray:
    if values.dtype == object:
        return np.array([v is None for v in values], dtype=bool)
    return np.isnan(values)


def is_numeric(values: np.ndarray) -> bool:
    return values.dtype != object


def _parse_timestamp(cell: str):
    cell = cell.strip()
    if not cell:
        return None
    if _INT_RE.match(cell):
        return int(cell)
    try:
        dt = datetime.fromisoformat(cell.replace("Z", "+00:00"))
    except ValueError:
        return None
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return calendar.timegm(dt.timetuple())


def format_timestamp(seconds: int) -> str:
    return datetime.fromtimestamp(int(seconds), tz=timezone.utc).strftime(_ISO_FMT)


def _to_float(cell: str):
    try:
        value = float(cell)
    except ValueError:
        return None
    return value if np.isfinite(value) else np.nan


def _convert_column(cells: list) -> np.ndarray:
    # numeric if at least half the non-empty cells parse as numbers
    present = [c for c in cells if c]
    parsed = [_to_float(c) for c in present]
    n_numeric = sum(p is not None for p in parsed)
    if present and n_numeric * 2 >= len(present):
        out = np.full(len(cells), np.nan)
        for i, c in enumerate(cells):
            if c:
                v = _to_float(c)
                if v is not None:
                    out[i] = v
        return out
    return np.array([c if c else None for c in cells], dtype=object)


def _open_source(source):
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"))
    if isinstance(source, (str, os.PathLike)):
        try:
            with open(source, encoding="utf-8", newline="") as fh:
                return io.StringIO(fh.read())
        except OSError as exc:
            raise IoError(f"cannot read {source}: {exc}") from exc
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return io.StringIO(data)


def parse_table(source, timestamp_column: str = "timestamp") -> TimeTable:
    """Read a UTF-8 CSV with a header row into a :class:`TimeTable`.

    ``source`` may be a path, raw bytes, or a binary/text file object. The
    timestamp column accepts ISO-8601 (naive values are taken as UTC) or
    integer epoch seconds. Rows are stably sorted by timestamp. Cells that
    do not parse in a numeric column become missing; rows whose timestamp
    does not parse are dropped with a warning.
    """
    reader = csv.reader(_open_source(source))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise FormatError("input is empty; expected a header row") from None
    if not header or any(not h for h in header) or len(set(header)) != len(header):
        raise FormatError(f"malformed header row: {header}")
    if all(_to_float(h) is not None for h in header):
        raise FormatError("first row looks like data, not a header")
    if timestamp_column not in header:
        raise SchemaError(f"timestamp column {timestamp_column!r} not found in header {header}")

    rows = [r for r in reader if any(c.strip() for c in r)]
    if not rows:
        raise EmptyInputError("no data rows")
    width = len(header)
    for i, r in enumerate(rows):
        if len(r) != width:
            raise FormatError(f"row {i + 2} has {len(r)} cells, header has {width}")

    t_idx = header.index(timestamp_column)
    stamps = [_parse_timestamp(r[t_idx]) for r in rows]
    keep = [i for i, s in enumerate(stamps) if s is not None]
    if len(keep) < len(rows):
        logger.warning("dropped %d rows with unparseable timestamps", len(rows) - len(keep))
    if not keep:
        raise EmptyInputError("no row has a parseable timestamp")

    ts = np.array([stamps[i] for i in keep], dtype=np.int64)
    order = np.argsort(ts, kind="stable")
    columns = {}
    for j, name in enumerate(header):
        if j == t_idx:
            continue
        cells = [rows[i][j].strip() for i in keep]
        columns[name] = _convert_column(cells)[order]
    return TimeTable(ts[order], columns, {}, timestamp_column)


def serialize_table(table: TimeTable, dest=None) -> str:
    """Write ``table`` in the dialect :func:`parse_table` reads; returns the text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([table.time_name] + table.names)
    cols = [table.columns[n] for n in table.names]
    for i, t in enumerate(table.timestamps):
        row = [format_timestamp(t)]
        for values in cols:
            v = values[i]
            if values.dtype == object:
                row.append("" if v is None else str(v))
            else:
                row.append("" if np.isnan(v) else repr(float(v)))
        writer.writerow(row)
    text = buf.getvalue()
    if dest is not None:
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def infer_feature_kinds(table: TimeTable, categorical_cap: int = 20, targets=()) -> dict:
    """Type every column as categorical or continuous.

    Integer-like (all observed values integral) or textual columns with fewer
    than ``categorical_cap`` distinct values are categorical. Target columns
    are categorical whatever their cardinality.
    """
    if categorical_cap < 1:
        raise ValueError("categorical_cap must be positive")
    schema = {}
    for name in table.names:
        values = table.columns[name]
        present = values[~missing_mask(values)]
        if len(present) == 0:
            raise UntypeableColumnError(name)
        if values.dtype == object:
            card = len(set(present))
            if card >= categorical_cap and name not in targets:
                raise UntypeableColumnError(
                    name, f"textual column {name!r} has {card} distinct values (cap {categorical_cap})"
                )
            schema[name] = FeatureKind(CATEGORICAL, card)
            continue
        card = len(np.unique(present))
        integer_like = bool(np.all(present == np.round(present)))
        if name in targets or (integer_like and card < categorical_cap):
            schema[name] = FeatureKind(CATEGORICAL, card)
        else:
            schema[name] = FeatureKind(CONTINUOUS)
    return schema


def _ensure_schema(table: TimeTable) -> dict:
    if set(table.schema) >= set(table.names):
        return table.schema
    return infer_feature_kinds(table)


def drop_uninformative(table: TimeTable, protocol_patterns=(), keep=()):
    """Remove constant and protocol columns.

    Returns ``(table, report)`` where ``report`` is a list of
    ``{"column", "reason"}`` dicts in column order. Columns named in ``keep``
    are never removed.
    """
    schema = _ensure_schema(table)
    report = []
    kept = []
    for name in table.names:
        if name in keep:
            kept.append(name)
            continue
        if any(fnmatch.fnmatchcase(name, p) for p in protocol_patterns):
            report.append({"column": name, "reason": "protocol"})
            continue
        values = table.columns[name]
        present = values[~missing_mask(values)]
        if schema[name].is_categorical:
            if len(set(present.tolist())) <= 1:
                report.append({"column": name, "reason": "single value"})
                continue
        elif len(present) == 0 or np.ptp(present) == 0:
            report.append({"column": name, "reason": "zero variance"})
            continue
        kept.append(name)
    if not kept:
        raise DegenerateDatasetError("every column was removed as uninformative")
    out = table.select(kept)
    out.schema = {n: schema[n] for n in kept}
    return out, report


_COMPARATORS = {
    "<=": operator.le,
    "<": operator.lt,
    ">=": operator.ge,
    ">": operator.gt,
    "==": operator.eq,
}


def filter_stationary(table: TimeTable, predicate=()) -> TimeTable:
    """Drop rows where every clause ``(column, comparator, threshold)`` holds.

    A missing cell makes its clause false, so such rows are kept.
    """
    if not predicate:
        return table
    mask = np.ones(table.n_rows, dtype=bool)
    for column, comparator, threshold in predicate:
        if column not in table.columns:
            raise SchemaError(f"stationary predicate references missing column {column!r}")
        values = table.columns[column]
        if not is_numeric(values):
            raise SchemaError(f"stationary predicate column {column!r} is not numeric")
        try:
            op = _COMPARATORS[comparator]
        except KeyError:
            raise ValueError(f"unknown comparator {comparator!r}") from None
        with np.errstate(invalid="ignore"):
            mask &= op(values, threshold)
    return table.take(np.flatnonzero(~mask))


def _impute_continuous(t: np.ndarray, values: np.ndarray, name: str) -> np.ndarray:
    miss = np.isnan(values)
    if not miss.any():
        return values.copy()
    if miss.all():
        raise UntypeableColumnError(name)
    kt, first = np.unique(t[~miss], return_index=True)
    kv = values[~miss][first]
    out = values.copy()
    q = np.clip(t[miss], kt[0], kt[-1]).astype(float)
    if len(kt) >= 4:
        out[miss] = CubicSpline(kt.astype(float), kv, bc_type="natural")(q)
    elif len(kt) >= 2:
        out[miss] = np.interp(q, kt.astype(float), kv)
    else:
        out[miss] = kv[0]
    return out


def _impute_categorical(values: np.ndarray, name: str) -> np.ndarray:
    miss = missing_mask(values)
    if not miss.any():
        return values.copy()
    present = np.flatnonzero(~miss)
    if len(present) == 0:
        raise UntypeableColumnError(name)
    # index of the most recent observed row; leading gaps take the first observation
    idx = np.where(~miss, np.arange(len(values)), 0)
    np.maximum.accumulate(idx, out=idx)
    idx[: present[0]] = present[0]
    return values[idx]


def impute(table: TimeTable) -> TimeTable:
    """Fill every gap: natural cubic spline for continuous columns (linear
    below four knots, constant below two, clamped outside the observed range),
    forward fill for categorical columns."""
    schema = _ensure_schema(table)
    cols = {}
    for name in table.names:
        values = table.columns[name]
        if schema[name].is_categorical:
            cols[name] = _impute_categorical(values, name)
        else:
            cols[name] = _impute_continuous(table.timestamps, values, name)
    return TimeTable(table.timestamps.copy(), cols, dict(schema), table.time_name)


def describe(table: TimeTable, columns=None) -> dict:
    """Descriptive summary per numeric column (sample std, ddof=1)."""
    out = {}
    for name in columns or table.names:
        values = table.columns[name]
        if not is_numeric(values):
            continue
        x = values[~np.isnan(values)]
        if len(x) == 0:
            continue
        mean, median = float(np.mean(x)), float(np.median(x))
        std = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
        if np.isclose(mean, median, rtol=1e-9, atol=1e-12):
            skew = "symmetric"
        else:
            skew = "right" if mean > median else "left"
        out[name] = ColumnSummary(mean, std, float(x.min()), float(x.max()), median, skew)
    return out
