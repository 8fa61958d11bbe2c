import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2_contingency, f_oneway

from pdmgraph.errors import DegenerateTableError, EncodingError, InsufficientDataError, UndefinedFError
from pdmgraph.ingest import CATEGORICAL, CONTINUOUS, FeatureKind, TimeTable
from pdmgraph.stats import (
    F_MAX,
    AssociationMatrix,
    Interval,
    IntervalSet,
    alarm_active_intervals,
    anomaly_overlap_report,
    anova_f,
    contingency,
    cramers_v,
    cramers_v_matrix,
    pearson,
    pearson_matrix,
    target_relevance,
    zscore_anomalies,
    zscores,
)


# Pearson


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-15)
    assert pearson([1, 2, 3], [6, 4, 2]) == pytest.approx(-1.0, abs=1e-15)
    # covariance sum 4 over sqrt(5 * 5)
    assert pearson([1, 2, 3, 4], [1, 3, 2, 4]) == 0.8


def test_pearson_zero_variance_is_zero_and_short_input_errors():
    assert pearson([1, 1, 1], [1, 2, 3]) == 0.0
    with pytest.raises(InsufficientDataError):
        pearson([1], [2])


def test_pearson_matrix_shape_and_oracle():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 4))
    names = list("abcd")
    t = TimeTable(np.arange(50), {n: X[:, i] for i, n in enumerate(names)})
    R = pearson_matrix(t, names)
    assert np.allclose(R.values, np.corrcoef(X.T), atol=1e-12)
    assert np.array_equal(R.values, R.values.T)
    with pytest.raises(InsufficientDataError):
        pearson_matrix(t.take([0]), names)


# Cramer's V


def test_cramers_v_examples():
    assert cramers_v([[10, 0], [0, 10]]) == 1.0
    assert cramers_v([[5, 5], [5, 5]]) == 0.0
    # chi2 = 20/3, n = 60, all expected 15
    assert cramers_v([[10, 20], [20, 10]]) == pytest.approx(1 / 3, abs=1e-12)


def test_cramers_v_matches_scipy_chi_square():
    rng = np.random.default_rng(1)
    for _ in range(20):
        table = rng.integers(1, 30, size=(rng.integers(2, 5), rng.integers(2, 5)))
        chi2 = chi2_contingency(table, correction=False)[0]
        expected = np.sqrt(chi2 / table.sum() / (min(table.shape) - 1))
        assert cramers_v(table) == pytest.approx(expected, rel=1e-12)


def test_cramers_v_drops_zero_margins_then_rejects_degenerate():
    assert cramers_v([[10, 0, 0], [0, 10, 0]]) == 1.0
    with pytest.raises(DegenerateTableError):
        cramers_v([[3, 0], [4, 0]])


def test_cramers_v_matrix_properties():
    rng = np.random.default_rng(7)
    a = rng.integers(0, 3, size=5000)
    shuffled = rng.permutation(a)
    t = TimeTable(np.arange(5000), {"a": a.astype(float), "b": a.astype(float), "c": shuffled.astype(float)})
    V = cramers_v_matrix(t, ["a", "b", "c"])
    assert V.values.shape == (3, 3)
    assert np.array_equal(np.diag(V.values), np.ones(3))
    assert np.array_equal(V.values, V.values.T)
    assert V["a", "b"] == pytest.approx(1.0, abs=1e-12)
    assert V["a", "c"] < 0.1


# ANOVA


def test_anova_examples():
    assert anova_f([1, 2, 3, 4, 5, 6], [0, 0, 0, 1, 1, 1]) == pytest.approx(13.5, abs=1e-9)
    assert anova_f([1, 2, 3, 3, 2, 1], [0, 0, 0, 1, 1, 1]) == 0.0
    assert anova_f([1, 1, 2, 2], [1, 1, 2, 2]) == F_MAX


def test_anova_matches_scipy():
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.normal(size=40)
        g = rng.integers(0, 3, size=40)
        assert anova_f(x, g) == pytest.approx(f_oneway(*(x[g == k] for k in range(3))).statistic, rel=1e-10)


def test_anova_errors():
    with pytest.raises(UndefinedFError):
        anova_f([1, 2, 3], [0, 0, 0])
    with pytest.raises(UndefinedFError):
        anova_f([1, 2], [0, 1])


def test_categorical_anova_takes_max_indicator():
    values = np.array(["a", "a", "b", "b", "c", "c"], dtype=object)
    labels = [0, 0, 1, 1, 0, 1]
    per_level = [anova_f((values == lev).astype(float), labels) for lev in ("a", "b", "c")]
    assert anova_f(values, labels, categorical=True) == max(per_level)


def test_target_relevance_scores_every_feature():
    t = TimeTable(
        np.arange(6),
        {"x": np.array([1.0, 2, 3, 4, 5, 6]), "m": np.array(["p", "p", "q", "q", "q", "q"], dtype=object), "alarm": np.array([0.0, 0, 0, 1, 1, 1])},
        {"x": FeatureKind(CONTINUOUS), "m": FeatureKind(CATEGORICAL, 2), "alarm": FeatureKind(CATEGORICAL, 2)},
    )
    rel = target_relevance(t, "alarm", ["x", "m"])
    assert rel.scores["x"] == pytest.approx(13.5)
    assert rel.scores["m"] == pytest.approx(anova_f([1, 1, 0, 0, 0, 0], [0, 0, 0, 1, 1, 1]))


# z-score anomalies


def test_zscore_constant_column_has_no_anomalies():
    assert len(zscore_anomalies(np.arange(5), [2.0] * 5)) == 0


def test_zscore_single_spike_boundary():
    values = [0.0] * 9 + [100.0]
    # mean 10, population std sqrt((9 * 100 + 90^2) / 10) = 30, so z = 90 / 30 = 3
    assert zscores(values)[-1] == 3.0
    out = zscore_anomalies(np.arange(10), values)
    assert out.to_json() == [{"start": 9, "end": 9, "label": "anomaly"}]


def test_zscore_two_spikes_two_intervals():
    values = np.zeros(100)
    values[[20, 21]] = 50.0
    values[70] = -60.0
    out = zscore_anomalies(np.arange(100) + 1000, values)
    assert [(iv.start, iv.end) for iv in out] == [(1020, 1021), (1070, 1070)]


# alarm intervals


def alarm_table(active):
    return TimeTable(np.arange(len(active)), {"alarm": np.array(active, dtype=float)})


def test_alarm_run_of_four_seconds_excluded_five_included():
    assert len(alarm_active_intervals(alarm_table([0, 1, 1, 1, 1, 0]), "alarm")) == 0
    out = alarm_active_intervals(alarm_table([0, 1, 1, 1, 1, 1, 0]), "alarm")
    assert out.to_json() == [{"start": 1, "end": 5, "label": "alarm:alarm"}]


def test_alternating_alarm_has_no_intervals():
    assert len(alarm_active_intervals(alarm_table([0, 1] * 10), "alarm")) == 0


def test_non_binary_alarm_lists_offending_values():
    with pytest.raises(EncodingError, match="2"):
        alarm_active_intervals(alarm_table([0, 1, 2]), "alarm")


# overlap report


def test_overlap_examples():
    alarms = IntervalSet([Interval(10, 20, "alarm")])
    rows = anomaly_overlap_report(
        alarms,
        {
            "a": IntervalSet([Interval(15, 25, "anomaly")]),
            "b": IntervalSet([Interval(30, 40, "anomaly")]),
            "c": IntervalSet([Interval(12, 14, "anomaly")]),
        },
    )
    by_col = {r["column"]: (r["overlap"], r["fraction"]) for r in rows}
    assert by_col == {"a": (5, 0.5), "b": (0, 0.0), "c": (2, 0.2)}
    assert [r["fraction"] for r in rows] == sorted((r["fraction"] for r in rows), reverse=True)
    assert anomaly_overlap_report(IntervalSet(), {}) == []


def test_association_json_round_trip():
    m = AssociationMatrix(["a", "b"], np.array([[1.0, 0.25], [0.25, 1.0]]), "pearson")
    back = AssociationMatrix.from_json(m.to_json())
    assert back.feature_names == m.feature_names and np.array_equal(back.values, m.values)


# properties


def random_table(seed, n_cols=10, n_rows=30):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_rows, n_cols)) @ rng.normal(size=(n_cols, n_cols))
    return X, TimeTable(np.arange(n_rows), {f"f{i}": X[:, i] for i in range(n_cols)})


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_pearson_matrix_equals_pairwise_oracle(seed):
    X, t = random_table(seed)
    R = pearson_matrix(t, t.names)
    assert np.array_equal(R.values, R.values.T)
    assert np.all(np.abs(R.values) <= 1.0)
    for i, j in itertools.combinations(range(X.shape[1]), 2):
        assert abs(R.values[i, j] - pearson(X[:, i], X[:, j])) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_cramers_matrix_equals_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    cols = {f"c{i}": rng.integers(0, 3, size=40).astype(float) for i in range(10)}
    cols = {k: v for k, v in cols.items() if len(np.unique(v)) > 1}
    t = TimeTable(np.arange(40), cols)
    V = cramers_v_matrix(t, t.names)
    assert np.array_equal(V.values, V.values.T)
    assert np.all((V.values >= 0) & (V.values <= 1))
    for i, j in itertools.combinations(range(len(cols)), 2):
        a, b = t.names[i], t.names[j]
        assert abs(V.values[i, j] - cramers_v(contingency(cols[a], cols[b]))) < 1e-12


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-100, 100, allow_nan=False), min_size=6, max_size=30).filter(lambda v: np.ptp(v) > 0.1),
    st.floats(0.1, 10),
    st.floats(-10, 10),
    st.integers(0, 1000),
)
def test_affine_invariance(xs, a, b, seed):
    x = np.array(xs)
    rng = np.random.default_rng(seed)
    y = rng.normal(size=len(x))
    g = np.arange(len(x)) % 2
    r = pearson(x, y)
    assert pearson(a * x + b, y) == pytest.approx(r, rel=1e-9, abs=1e-9)
    f = anova_f(x, g)
    if f < 1e6:
        assert anova_f(a * x + b, g) == pytest.approx(f, rel=1e-9, abs=1e-9)
    assert f >= 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_cramers_v_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    table = rng.integers(1, 20, size=(rng.integers(2, 5), rng.integers(2, 5)))
    v = cramers_v(table)
    permuted = table[rng.permutation(table.shape[0])][:, rng.permutation(table.shape[1])]
    assert cramers_v(permuted) == pytest.approx(v, rel=1e-12, abs=1e-15)
    assert 0.0 <= v <= 1.0
