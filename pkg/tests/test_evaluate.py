import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdmgraph.errors import DegenerateClassError, SchemaError, StratificationError, ValidationError
from pdmgraph.evaluate import (
    ForestModel,
    confusion_matrix,
    evaluate,
    expand_grid,
    fit_forest,
    grid_search,
    lime_explain,
    metrics_from_confusion,
    permutation_importance,
    stratified_folds,
    train_forest,
)
from pdmgraph.sampling import LabeledDataset


def labeled(X, y, names=None, groups=None):
    X = np.asarray(X, dtype=float)
    names = names or [f"f{j}" for j in range(X.shape[1])]
    continuous = np.ones(X.shape[1], dtype=bool)
    for cols in (groups or {}).values():
        continuous[cols] = False
    return LabeledDataset(X, np.asarray(y), np.arange(len(X)), names, continuous, groups or {})


def step_data(seed, n=400, d=5, feature=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (X[:, feature] > 0).astype(int)
    return X, y


# metrics


def test_metric_examples():
    r = metrics_from_confusion([[50, 0], [0, 50]])
    assert (r.accuracy, r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0, 1.0) and r.flags == []
    r = metrics_from_confusion([[40, 10], [10, 40]])
    assert r.precision == pytest.approx(0.8) and r.recall == pytest.approx(0.8)
    assert r.f1 == pytest.approx(0.8) and r.accuracy == pytest.approx(0.8)
    r = metrics_from_confusion([[10, 0], [5, 0]])
    assert r.precision == 0.0 and r.recall == 0.0
    assert "precision_undefined" in r.flags and "f1_undefined" in r.flags


def test_confusion_layout():
    assert confusion_matrix([0, 0, 1, 1, 1], [0, 1, 0, 1, 1]) == [[1, 1], [1, 2]]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=4, max_size=4).filter(lambda c: sum(c) > 0))
def test_metric_identities(c):
    tn, fp, fn, tp = c
    r = metrics_from_confusion([[tn, fp], [fn, tp]])
    assert r.accuracy == (tp + tn) / (tn + fp + fn + tp)
    if r.precision + r.recall > 0:
        assert r.f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall), abs=1e-15)
    for v in (r.accuracy, r.precision, r.recall, r.f1):
        assert 0.0 <= v <= 1.0


# forest


def test_separable_blobs_training_accuracy_one():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(-3, 0.5, size=(60, 2)), rng.normal(3, 0.5, size=(60, 2))])
    y = np.array([0] * 60 + [1] * 60)
    model = fit_forest(X, y, n_trees=50, seed=1)
    assert np.array_equal(model.predict(X), y)


def exhaustive_root_split(X, y):
    """Scan every feature and midpoint for the lowest weighted Gini."""
    best = None
    for j in range(X.shape[1]):
        values = np.unique(X[:, j])
        for lo, hi in zip(values[:-1], values[1:]):
            t = 0.5 * (lo + hi)
            imp = 0.0
            for side in (X[:, j] <= t, X[:, j] > t):
                p = y[side].mean()
                imp += side.sum() * 2 * p * (1 - p)
            if best is None or imp < best[0] - 1e-12:
                best = (imp, j, t)
    return best[1], best[2]


def test_depth_one_root_split_matches_exhaustive_scan():
    rng = np.random.default_rng(3)
    x0 = np.concatenate([rng.uniform(0, 0.45, 30), rng.uniform(0.55, 1, 30)])
    X = np.column_stack([x0, rng.uniform(0, 1, 60)])
    y = (x0 > 0.5).astype(int)
    model = fit_forest(X, y, n_trees=1, max_depth=1, seed=0, max_features=None, bootstrap=False)
    tree = model.trees[0]
    j, t = exhaustive_root_split(X, y)
    assert (int(tree.feature[0]), float(tree.threshold[0])) == (j, pytest.approx(t))
    assert j == 0 and abs(t - 0.5) < 0.06


def test_forest_determinism_and_json_round_trip():
    X, y = step_data(1)
    a = fit_forest(X, y, n_trees=10, seed=7)
    b = fit_forest(X, y, n_trees=10, seed=7)
    assert a.equals(b)
    assert not a.equals(fit_forest(X, y, n_trees=10, seed=8))
    back = ForestModel.from_json(a.to_json())
    assert back.equals(a) and np.array_equal(back.predict(X), a.predict(X))


def test_forest_errors():
    with pytest.raises(DegenerateClassError):
        fit_forest(np.zeros((5, 2)), np.zeros(5))
    model = fit_forest(*step_data(0, n=50), n_trees=3)
    with pytest.raises(SchemaError):
        model.predict(np.zeros((2, 4)))
    with pytest.raises(ValidationError):
        ForestModel.from_json({"format": "other", "version": 1})


def test_tied_vote_predicts_zero():
    X = np.array([[0.0], [1.0]])
    a = fit_forest(X, [0, 1], n_trees=1, max_depth=1, bootstrap=False, seed=0)
    b = fit_forest(X, [1, 0], n_trees=1, max_depth=1, bootstrap=False, seed=0)
    pair = ForestModel(a.trees + b.trees, 2, 1, 1, 0, 1)
    assert pair.predict_proba(X).tolist() == [0.5, 0.5]
    assert pair.predict(X).tolist() == [0, 0]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_forest_not_worse_than_worst_tree(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(120, 3))
    y = ((X[:, 0] + 0.5 * rng.normal(size=120)) > 0).astype(int)
    if len(np.unique(y)) < 2:
        return
    model = fit_forest(X, y, n_trees=7, max_depth=3, seed=seed)
    forest_acc = np.mean(model.predict(X) == y)
    worst = min(np.mean(t.predict(X) == y) for t in model.trees)
    assert forest_acc >= worst


def test_evaluate_report():
    X, y = step_data(2)
    model = train_forest(labeled(X[:300], y[:300]), n_trees=20, seed=0)
    report = evaluate(model, labeled(X[300:], y[300:]))
    (tn, fp), (fn, tp) = report.confusion
    assert tn + fp + fn + tp == 100
    assert report.accuracy == (tp + tn) / 100 and report.f1 > 0.9


# grid search


def test_expand_grid_and_folds():
    assert expand_grid({"max_depth": [2, 4], "n_trees": [5]}) == [
        {"max_depth": 2, "n_trees": 5},
        {"max_depth": 4, "n_trees": 5},
    ]
    with pytest.raises(ValidationError):
        expand_grid({"depth": [1]})
    folds = stratified_folds(np.array([0] * 9 + [1] * 6), 3, seed=0)
    for f in range(3):
        assert np.bincount(np.array([0] * 9 + [1] * 6)[folds == f]).tolist() == [3, 2]
    with pytest.raises(StratificationError):
        stratified_folds(np.array([0] * 9 + [1] * 2), 3)


def test_singleton_grid_returns_that_point():
    X, y = step_data(4, n=120)
    res = grid_search(labeled(X, y), {"max_depth": [3], "n_trees": [5]}, cv_folds=3, seed=1)
    assert res.best_params == {"max_depth": 3, "n_trees": 5}
    assert len(res.table) == 1 and len(res.table[0]["fold_f1"]) == 3


def test_planted_depth_wins_on_stair_step():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, 300)
    # alternating stair: 0 on [0, .25) and [.5, .75), 1 elsewhere; one split cannot fit it
    y = (np.floor(x * 4) % 2).astype(int)
    data = labeled(np.column_stack([x, rng.normal(size=300)]), y)
    res = grid_search(data, {"max_depth": [1, 2], "n_trees": [15]}, cv_folds=3, seed=2)
    assert res.best_params["max_depth"] == 2
    assert all(res.best_score >= row["mean_f1"] for row in res.table)
    assert res.to_csv().splitlines()[0] == "max_depth,n_trees,fold0_f1,fold1_f1,fold2_f1,mean_f1"


def test_random_search_over_whole_grid_equals_grid_search():
    X, y = step_data(6, n=150)
    grid = {"max_depth": [1, 3], "n_trees": [5, 9]}
    full = grid_search(labeled(X, y), grid, cv_folds=3, seed=3)
    rand = grid_search(labeled(X, y), grid, cv_folds=3, seed=3, n_iter=4)
    assert rand.to_json() == full.to_json()
    with pytest.raises(ValidationError):
        grid_search(labeled(X, y), grid, cv_folds=3, n_iter=5)


# explanations


def test_permutation_importance_ranks_signal_and_zeroes_constant():
    X, y = step_data(7, n=500, d=4, feature=1)
    X[:, 3] = 2.5
    train, test = labeled(X[:350], y[:350]), labeled(X[350:], y[350:])
    model = train_forest(train, n_trees=25, seed=1)
    ranked = permutation_importance(model, test, n_repeats=5, seed=0)
    assert ranked[0][0] == "f1"
    drops = dict(ranked)
    assert drops["f3"] == 0.0
    unused = [j for j in range(4) if j not in {int(f) for t in model.trees for f in t.feature[t.left != -1]}]
    for j in unused:
        assert abs(drops[f"f{j}"]) < 0.02


def test_permutation_importance_shuffles_one_hot_groups_together():
    rng = np.random.default_rng(8)
    level = rng.integers(0, 3, size=300)
    X = np.column_stack([rng.normal(size=300), np.eye(3)[level]])
    y = (level == 2).astype(int)
    data = labeled(X, y, ["noise", "mode=a", "mode=b", "mode=c"], {"mode": [1, 2, 3]})
    model = train_forest(data, n_trees=15, seed=0)
    ranked = permutation_importance(model, data, n_repeats=3, seed=1)
    assert [name for name, _ in ranked] == ["mode", "noise"]


def test_lime_ranks_step_feature_first_near_boundary():
    X, y = step_data(9, n=600, d=5, feature=3)
    train = labeled(X, y)
    model = train_forest(train, n_trees=30, seed=2)
    near = np.flatnonzero(np.abs(X[:, 3]) < 0.2)[:10]
    hits = 0
    for i in near:
        exp = lime_explain(model, X[i], train, n_perturb=800, seed=int(i), instance_id=int(i))
        hits += exp.weights[0][0] == "f3"
        assert exp.instance_id == i
    assert hits == len(near)


def test_lime_constant_model_has_undefined_r2():
    X, y = step_data(10, n=100)
    train = labeled(X, y)
    model = train_forest(train, n_trees=3, seed=0)
    for t in model.trees:
        t.left[:] = -1
        t.counts[:] = [5, 0]
    exp = lime_explain(model, X[0], train, n_perturb=300, seed=0)
    assert exp.r2 is None and "r2_undefined" in exp.flags
    assert all(abs(w) < 1e-9 for _, w in exp.weights)


def test_lime_is_deterministic_and_checks_dimension():
    X, y = step_data(11, n=200)
    train = labeled(X, y)
    model = train_forest(train, n_trees=10, seed=0)
    a = lime_explain(model, X[5], train, n_perturb=200, top_k=2, seed=4)
    b = lime_explain(model, X[5], train, n_perturb=200, top_k=2, seed=4)
    assert a.to_json() == b.to_json() and len(a.weights) == 2
    assert [abs(w) for _, w in a.weights] == sorted((abs(w) for _, w in a.weights), reverse=True)
    with pytest.raises(SchemaError):
        lime_explain(model, X[5, :3], train)
