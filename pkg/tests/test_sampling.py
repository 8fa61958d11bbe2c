import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import enn_removal_oracle, point_segment_distance
from pdmgraph.errors import (
    DegenerateClassError,
    EmptyDatasetError,
    InsufficientMinorityError,
    InvalidRangeError,
    StratificationError,
)
from pdmgraph.ingest import CATEGORICAL, CONTINUOUS, FeatureKind, TimeTable
from pdmgraph.sampling import (
    LabeledDataset,
    SamplingReport,
    balance_dataset,
    enn,
    enn_keep_mask,
    find_optimal_interval,
    load_dataset,
    save_dataset,
    shift_labels,
    smote,
    smote_samples,
    smoteenn,
    split_dataset,
    standardize,
    stratified_split,
    time_interval_undersample,
    undersampled_count,
)


def dataset(ts, y, X=None):
    ts = np.asarray(ts, dtype=np.int64)
    X = np.arange(len(ts), dtype=float)[:, None] if X is None else np.asarray(X, dtype=float)
    return LabeledDataset(X, np.asarray(y), ts, [f"x{i}" for i in range(X.shape[1])], np.ones(X.shape[1], dtype=bool))


def alarm_table(active_at, n, **cols):
    a = np.zeros(n)
    a[list(active_at)] = 1
    columns = {"x": np.arange(n, dtype=float), **cols, "alarm": a}
    schema = {k: FeatureKind(CONTINUOUS) for k in columns}
    schema["alarm"] = FeatureKind(CATEGORICAL, 2)
    return TimeTable(np.arange(n), columns, schema)


def window_scan(ts, active, horizon):
    """Brute force: y_t = any active s with t < s <= t + horizon, complete windows only."""
    out = []
    for t in ts:
        if t + horizon > ts[-1]:
            continue
        out.append(int(any(a and t < s <= t + horizon for s, a in zip(ts, active))))
    return out


# label shifting


def test_shift_single_activation_window():
    d = shift_labels(alarm_table([100], 200), "alarm", horizon=60)
    positive = d.timestamps[d.y == 1]
    assert positive.min() == 40 and positive.max() == 99 and len(positive) == 60
    assert d.feature_names == ["x"]


def test_shift_never_active_drops_tail():
    d = shift_labels(alarm_table([], 50), "alarm", horizon=10)
    assert d.n_rows == 40 and not d.y.any()


def test_shift_dense_alternating_matches_scan():
    active = [i for i in range(10) if i % 2]
    d = shift_labels(alarm_table(active, 10), "alarm", horizon=3)
    assert d.y.tolist() == window_scan(list(range(10)), [i % 2 == 1 for i in range(10)], 3)


def test_shift_rejects_long_horizon():
    with pytest.raises(EmptyDatasetError):
        shift_labels(alarm_table([3], 10), "alarm", horizon=9)


def test_shift_one_hot_encodes_categoricals():
    t = alarm_table([5], 12, mode=np.array(["b", "a", "b"] * 4, dtype=object))
    t.schema["mode"] = FeatureKind(CATEGORICAL, 2)
    d = shift_labels(t, "alarm", horizon=2)
    assert d.feature_names == ["x", "mode=a", "mode=b"]
    assert d.groups == {"mode": [1, 2]}
    assert d.X[:, 1:].sum(axis=1).tolist() == [1.0] * d.n_rows


@settings(max_examples=60, deadline=None)
@given(st.lists(st.booleans(), min_size=3, max_size=40), st.integers(1, 10))
def test_shift_count_equals_brute_force(active, horizon):
    n = len(active)
    if horizon >= n - 1:
        return
    d = shift_labels(alarm_table([i for i, a in enumerate(active) if a], n), "alarm", horizon=horizon)
    assert d.y.tolist() == window_scan(list(range(n)), active, horizon)


# undersampling


def test_small_bucket_kept_whole_and_large_bucket_sampled():
    d = dataset([0, 1, 2], [0, 0, 0])
    assert time_interval_undersample(d, 10, num_sample=5).n_rows == 3
    d = dataset(range(10), [0] * 10)
    assert time_interval_undersample(d, 10, num_sample=2, seed=1).n_rows == 2


def test_hundred_rows_ten_buckets():
    d = dataset(range(100), [0] * 100)
    out = time_interval_undersample(d, 10, num_sample=1, seed=3)
    assert out.n_rows == 10
    assert sorted(set((out.timestamps // 10).tolist())) == list(range(10))
    assert undersampled_count(d, 10, 1) == 10


def test_label_one_rows_always_kept_and_output_sorted():
    rng = np.random.default_rng(0)
    y = (rng.random(300) < 0.2).astype(int)
    d = dataset(np.arange(300) * 2, y)
    out = time_interval_undersample(d, 17, num_sample=2, seed=5)
    assert set(d.timestamps[y == 1]) <= set(out.timestamps)
    assert np.all(np.diff(out.timestamps) >= 0)
    assert int(np.sum(out.y == 0)) == undersampled_count(d, 17, 2)


def linear_scan(ts, y, target, lo, hi, num_sample):
    """Exhaustive oracle: largest interval in [lo, hi] keeping >= target label-0 rows."""
    zeros = np.asarray(ts)[np.asarray(y) == 0]
    best = None
    for interval in range(lo, hi + 1):
        q = (zeros - ts[0]) // interval
        cuts = np.flatnonzero(np.diff(q)) + 1
        sizes = np.diff(np.concatenate([[0], cuts, [len(q)]]))
        if np.minimum(sizes, num_sample).sum() >= target:
            best = interval
    return best


def test_interval_search_examples():
    d = dataset(range(1000), [0] * 900 + [1] * 100)
    res = find_optimal_interval(d, target_size=100, min_interval=1, max_interval=999)
    assert res.feasible and res.interval == linear_scan(d.timestamps, d.y, 100, 1, 999, 1)
    assert res.interval == 9
    # boundary: target reachable at max_interval
    assert find_optimal_interval(d, target_size=1, max_interval=50).interval == 50
    # infeasible: more than every label-0 row
    res = find_optimal_interval(d, target_size=901, min_interval=1, max_interval=50)
    assert res.interval == 50 and not res.feasible
    assert len(res.trace) > 0 and all({"interval", "size"} <= set(p) for p in res.trace)
    with pytest.raises(InvalidRangeError):
        find_optimal_interval(d, min_interval=10, max_interval=5)


def test_interval_search_defaults_to_label_one_count():
    d = dataset(range(200), [0] * 180 + [1] * 20)
    res = find_optimal_interval(d)
    assert res.target_size == 20
    assert res.interval == linear_scan(d.timestamps, d.y, 20, 1, 199, 1)


def test_size_non_increasing_on_doubling_ladder():
    rng = np.random.default_rng(8)
    ts = np.cumsum(rng.integers(1, 4, size=3000))
    y = (rng.random(3000) < 0.1).astype(int)
    d = dataset(ts, y)
    sizes = [undersampled_count(d, 2**k, 2) for k in range(20)]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))


# SMOTE / ENN


def test_smote_two_point_minority_on_diagonal():
    X = np.array([[0.0, 0.0], [1.0, 1.0]] + [[5.0, 0.0]] * 8)
    y = np.array([1, 1] + [0] * 8)
    Xs, ys = smote(X, y, k_neighbors=1, seed=0)
    new = Xs[len(X):]
    assert len(new) == 6 and np.all(ys[len(X):] == 1)
    assert np.all(new[:, 0] == new[:, 1]) and np.all((new >= 0) & (new <= 1))


def test_smote_reaches_ratio_target():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(107, 2))
    y = np.array([1] * 20 + [0] * 87)
    for ratio in (1.0, 0.5):
        _, ys = smote(X, y, k_neighbors=3, ratio=ratio, seed=2)
        assert int(np.sum(ys == 1)) == math.ceil(ratio * 87)


def test_smote_errors():
    X = np.zeros((6, 2))
    with pytest.raises(InsufficientMinorityError):
        smote(X, [1, 1, 0, 0, 0, 0], k_neighbors=2)
    with pytest.raises(InsufficientMinorityError):
        smote(X, [0] * 6, k_neighbors=2)


def test_smote_points_lie_on_neighbour_segments():
    rng = np.random.default_rng(4)
    minority = rng.normal(size=(30, 2))
    pts, base, partner = smote_samples(minority, 5, 200, np.random.default_rng(9))
    for p, b, q in zip(pts, base, partner):
        assert point_segment_distance(p, minority[b], minority[q]) < 1e-12
        d = np.sum((minority - minority[b]) ** 2, axis=1)
        d[b] = np.inf
        assert q in np.argsort(d)[:5]


def test_smote_snaps_one_hot_groups():
    rng = np.random.default_rng(2)
    onehot = np.eye(3)[rng.integers(0, 3, size=40)]
    X = np.column_stack([rng.normal(size=40), onehot])
    y = np.array([1] * 10 + [0] * 30)
    Xs, _ = smote(X, y, k_neighbors=3, seed=1, groups=[[1, 2, 3]])
    block = Xs[40:, 1:]
    assert set(np.unique(block)) <= {0.0, 1.0}
    assert np.all(block.sum(axis=1) == 1.0)


def test_enn_examples():
    X = np.array([[0.0], [0.1], [0.2], [0.15], [5.0], [5.1], [5.2], [5.3]])
    y = np.array([0, 0, 0, 1, 1, 1, 1, 0])
    keep = enn_keep_mask(X, y, 3)
    assert not keep[3] and not keep[7]
    sep = np.array([[0.0], [0.1], [0.2], [5.0], [5.1], [5.2]])
    assert enn_keep_mask(sep, np.array([0, 0, 0, 1, 1, 1]), 2).all()


def test_enn_can_eliminate_a_class():
    X = np.array([[0.0], [0.1], [0.2], [0.3], [0.15]])
    with pytest.raises(DegenerateClassError):
        enn(X, np.array([0, 0, 0, 0, 1]), 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 3, 5]))
def test_enn_matches_quadratic_oracle(seed, k):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(0, 1, size=(30, 2)), rng.normal(1, 1, size=(30, 2))])
    y = np.array([0] * 30 + [1] * 30)
    removed = set(np.flatnonzero(~enn_keep_mask(X, y, k)).tolist())
    assert removed == enn_removal_oracle(X, y, k)


def test_smoteenn_balances_blobs_and_is_deterministic():
    rng = np.random.default_rng(6)
    X = np.vstack([rng.normal(0, 1, size=(400, 2)), rng.normal(2.5, 1, size=(60, 2))])
    y = np.array([0] * 400 + [1] * 60)
    Xa, ya, counts = smoteenn(X, y, 5, 3, seed=4)
    ratio = np.sum(ya == 1) / np.sum(ya == 0)
    assert 0.5 <= ratio <= 2.0
    assert counts["before"] == {"0": 400, "1": 60}
    assert counts["after_smote"] == {"0": 400, "1": 400}
    assert counts["after_enn"] == {"0": int(np.sum(ya == 0)), "1": int(np.sum(ya == 1))}
    Xb, yb, _ = smoteenn(X, y, 5, 3, seed=4)
    assert np.array_equal(Xa, Xb) and np.array_equal(ya, yb)


def test_smoteenn_rejects_empty_minority():
    with pytest.raises(InsufficientMinorityError):
        smoteenn(np.zeros((10, 2)), np.zeros(10, dtype=int))


# split and standardization


def test_split_counts():
    y = np.array([0] * 50 + [1] * 50)
    tr, te = stratified_split(y, 0.7, seed=0)
    assert np.bincount(y[tr]).tolist() == [35, 35] and np.bincount(y[te]).tolist() == [15, 15]
    y = np.array([0] * 8 + [1] * 2)
    tr, te = stratified_split(y, 0.7, seed=0)
    # 0.7 * 8 = 5.6 rounds to 6; 0.7 * 2 = 1.4 rounds to 1
    assert np.bincount(y[tr]).tolist() == [6, 1] and np.bincount(y[te]).tolist() == [2, 1]


def test_split_rejects_singleton_class():
    with pytest.raises(StratificationError):
        stratified_split([0, 0, 0, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=4, max_size=80), st.integers(0, 1000))
def test_split_is_a_deterministic_partition(y, seed):
    y = np.array(y)
    if min(np.sum(y == 0), np.sum(y == 1)) < 2:
        return
    tr, te = stratified_split(y, 0.7, seed)
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(len(y)))
    for c in (0, 1):
        n = int(np.sum(y == c))
        # half-up rounding in exact arithmetic
        assert int(np.sum(y[tr] == c)) == math.floor(Fraction(7, 10) * n + Fraction(1, 2))
    tr2, te2 = stratified_split(y, 0.7, seed)
    assert np.array_equal(tr, tr2) and np.array_equal(te, te2)


def test_standardization_fit_on_train_only():
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.normal(5, 3, size=200), np.full(200, 2.0), rng.integers(0, 2, size=200)])
    d = LabeledDataset(X, np.array([0, 1] * 100), np.arange(200), ["a", "const", "flag"], np.array([True, True, False]))
    train, test = split_dataset(d, 0.7, seed=1)
    train_s, test_s = standardize(train, test)
    assert abs(train_s.X[:, 0].mean()) < 1e-9 and abs(train_s.X[:, 0].std() - 1) < 1e-9
    assert np.all(train_s.X[:, 1] == 0.0)
    assert np.array_equal(train_s.X[:, 2], train.X[:, 2])
    assert abs(test_s.X[:, 0].mean()) > 1e-6


def test_balance_dataset_marks_synthetic_rows():
    rng = np.random.default_rng(3)
    X = np.vstack([rng.normal(0, 1, size=(80, 2)), rng.normal(3, 1, size=(20, 2))])
    d = dataset(np.arange(100), [0] * 80 + [1] * 20, X)
    out, counts = balance_dataset(d, 5, 3, seed=0)
    real = out.timestamps >= 0
    assert np.all(out.y[~real] == 1)
    assert counts["after_enn"] == {"0": int(np.sum(out.y == 0)), "1": int(np.sum(out.y == 1))}
    # every real row is an unmodified input row
    for row, t in zip(out.X[real], out.timestamps[real]):
        assert np.array_equal(row, X[t])


def test_dataset_round_trip(tmp_path):
    d = shift_labels(alarm_table([30], 60, z=np.linspace(0, 1, 60) ** 2), "alarm", horizon=5)
    d = standardize(d)
    report = SamplingReport({"0": 1}, {"0": 1}, {"0": 1}, 5, True, [{"interval": 5, "size": 1}])
    save_dataset(d, tmp_path, "alarm_train", report)
    back = load_dataset(tmp_path, "alarm_train")
    assert np.array_equal(back.X, d.X) and np.array_equal(back.y, d.y)
    assert np.array_equal(back.timestamps, d.timestamps) and back.feature_names == d.feature_names
