"""Reference classifier (bagged CART forest), cross-validated tuning,
metrics, and model explanations."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateClassError, SchemaError, StratificationError, ValidationError
from .sampling import LabeledDataset, smoteenn

FOREST_FORMAT = "pdmgraph-forest"
FOREST_VERSION = 1
LEAF = -1


@dataclass
class Tree:
    """Flat binary tree. ``left[i] == LEAF`` marks a leaf; rows with
    ``x[feature] <= threshold`` go left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, 2) class counts of the training rows reaching each node

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaves(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.left[node] != LEAF
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active[idx] = self.left[node[idx]] != LEAF
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        c = self.counts[self.leaves(X)]
        return (c[:, 1] > c[:, 0]).astype(np.int64)

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(v) for v in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Tree":
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=float),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["counts"], dtype=np.int64).reshape(-1, 2),
        )

    def equals(self, other: "Tree") -> bool:
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("feature", "threshold", "left", "right", "counts")
        )


def _best_split(x: np.ndarray, y: np.ndarray, w: np.ndarray, min_leaf: int):
    """Lowest weighted Gini over thresholds on one feature.

    ``w`` holds bootstrap multiplicities. Returns (impurity, threshold) or None.
    """
    order = np.argsort(x, kind="stable")
    xs, ys, ws = x[order], y[order], w[order]
    n_left = np.cumsum(ws)[:-1]
    pos_left = np.cumsum(ws * ys)[:-1]
    total, pos = ws.sum(), (ws * ys).sum()
    n_right = total - n_left
    pos_right = pos - pos_left
    valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        pl = pos_left / n_left
        pr = pos_right / n_right
        imp = n_left * 2 * pl * (1 - pl) + n_right * 2 * pr * (1 - pr)
    imp = np.where(valid, imp, np.inf)
    i = int(np.argmin(imp))
    return float(imp[i]), float(0.5 * (xs[i] + xs[i + 1]))


def _n_features(max_features, d: int) -> int:
    if max_features in (None, "all"):
        return d
    if max_features == "sqrt":
        return max(1, int(math.isqrt(d)))
    return max(1, min(d, int(max_features)))


def grow_tree(X, y, weights, max_depth: int, min_leaf: int, max_features, rng) -> Tree:
    """CART on Gini impurity with per-node feature subsampling.

    When none of the sampled features admits a split, the remaining features
    are tried before the node becomes a leaf.
    """
    d = X.shape[1]
    k = _n_features(max_features, d)
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(rows):
        feature.append(0)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        w = weights[rows]
        pos = int(np.sum(w * y[rows]))
        counts.append([int(w.sum()) - pos, pos])
        return len(feature) - 1

    root = np.flatnonzero(weights > 0)
    stack = [(new_node(root), root, 0)]
    while stack:
        node, rows, depth = stack.pop()
        n0, n1 = counts[node]
        if depth >= max_depth or n0 == 0 or n1 == 0 or n0 + n1 < 2 * min_leaf:
            continue
        perm = rng.permutation(d)
        best = None
        for batch in (perm[:k], perm[k:]):
            for j in batch:
                found = _best_split(X[rows, j], y[rows], weights[rows], min_leaf)
                if found is not None and (best is None or found[0] < best[0]):
                    best = (found[0], found[1], int(j))
            if best is not None:
                break
        if best is None:
            continue
        _, thr, j = best
        go_left = X[rows, j] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        feature[node], threshold[node] = j, thr
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(counts, dtype=np.int64).reshape(-1, 2),
    )


@dataclass
class ForestModel:
    trees: list
    n_trees: int
    max_depth: int
    min_leaf: int
    seed: int
    n_features: int
    feature_names: list = field(default_factory=list)
    max_features: object = "sqrt"
    bootstrap: bool = True

    def votes(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise SchemaError(f"expected {self.n_features} features, got shape {X.shape}")
        return np.sum([t.predict(X) for t in self.trees], axis=0)

    def predict_proba(self, X) -> np.ndarray:
        """Fraction of trees voting for class 1."""
        return self.votes(X) / len(self.trees)

    def predict(self, X) -> np.ndarray:
        # a tied vote predicts 0
        return (2 * self.votes(X) > len(self.trees)).astype(np.int64)

    def to_json(self) -> dict:
        return {
            "format": FOREST_FORMAT,
            "version": FOREST_VERSION,
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "seed": self.seed,
            "n_features": self.n_features,
            "feature_names": list(self.feature_names),
            "max_features": self.max_features,
            "bootstrap": self.bootstrap,
            "trees": [t.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, d: dict) -> "ForestModel":
        if d.get("format") != FOREST_FORMAT or d.get("version") != FOREST_VERSION:
            raise ValidationError(f"unsupported model format {d.get('format')!r} v{d.get('version')}")
        return cls(
            [Tree.from_json(t) for t in d["trees"]],
            d["n_trees"],
            d["max_depth"],
            d["min_leaf"],
            d["seed"],
            d["n_features"],
            d["feature_names"],
            d["max_features"],
            d["bootstrap"],
        )

    def equals(self, other: "ForestModel") -> bool:
        return len(self.trees) == len(other.trees) and all(a.equals(b) for a, b in zip(self.trees, other.trees))


def fit_forest(
    X,
    y,
    n_trees: int = 50,
    max_depth: int = 8,
    min_leaf: int = 1,
    seed: int = 0,
    max_features="sqrt",
    bootstrap: bool = True,
    feature_names=(),
) -> ForestModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0 or len(np.unique(y)) < 2:
        raise DegenerateClassError("training data must contain both classes")
    if n_trees < 1 or max_depth < 0 or min_leaf < 1:
        raise ValidationError("n_trees >= 1, max_depth >= 0 and min_leaf >= 1 are required")
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        if bootstrap:
            weights = np.bincount(rng.integers(len(X), size=len(X)), minlength=len(X))
        else:
            weights = np.ones(len(X), dtype=np.int64)
        trees.append(grow_tree(X, y, weights, max_depth, min_leaf, max_features, rng))
    names = list(feature_names) or [f"x{j}" for j in range(X.shape[1])]
    return ForestModel(trees, n_trees, max_depth, min_leaf, seed, X.shape[1], names, max_features, bootstrap)


def train_forest(train: LabeledDataset, n_trees: int = 50, max_depth: int = 8, min_leaf: int = 1, seed: int = 0, **kw) -> ForestModel:
    return fit_forest(train.X, train.y, n_trees, max_depth, min_leaf, seed, feature_names=train.feature_names, **kw)


# metrics


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: list  # [[TN, FP], [FN, TP]], rows = actual class
    seed: int | None = None
    params: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": self.confusion,
            "seed": self.seed,
            "params": self.params,
            "flags": self.flags,
        }


def confusion_matrix(y_true, y_pred) -> list:
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    return [[int(np.sum((t == a) & (p == b))) for b in (0, 1)] for a in (0, 1)]


def metrics_from_confusion(confusion, seed=None, params=None) -> EvalReport:
    (tn, fp), (fn, tp) = confusion
    n = tn + fp + fn + tp
    flags = []
    if tp + fp == 0:
        precision = 0.0
        flags.append("precision_undefined")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 0.0
        flags.append("recall_undefined")
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0:
        f1 = 0.0
        flags.append("f1_undefined")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    accuracy = (tp + tn) / n if n else 0.0
    return EvalReport(accuracy, precision, recall, f1, [[tn, fp], [fn, tp]], seed, dict(params or {}), flags)


def f1_score(y_true, y_pred) -> float:
    return metrics_from_confusion(confusion_matrix(y_true, y_pred)).f1


def evaluate(model: ForestModel, test: LabeledDataset) -> EvalReport:
    if test.n_rows == 0:
        raise ValidationError("test set is empty")
    pred = model.predict(test.X)
    params = {"n_trees": model.n_trees, "max_depth": model.max_depth, "min_leaf": model.min_leaf}
    return metrics_from_confusion(confusion_matrix(test.y, pred), model.seed, params)


# tuning


PARAM_KEYS = ("k_neighbors", "enn_n_neighbors", "n_trees", "max_depth", "min_leaf")


def expand_grid(param_grid: dict) -> list:
    unknown = set(param_grid) - set(PARAM_KEYS)
    if unknown:
        raise ValidationError(f"unknown grid parameters: {sorted(unknown)}")
    keys = sorted(param_grid)
    values = [list(param_grid[k]) for k in keys]
    if not keys or any(not v for v in values):
        raise ValidationError("parameter grid is empty")
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def stratified_folds(y, n_folds: int, seed=0) -> np.ndarray:
    """Fold id per row: each class is shuffled and dealt round-robin."""
    y = np.asarray(y)
    if n_folds < 2:
        raise ValidationError("need at least 2 folds")
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=np.int64)
    for label in (0, 1):
        rows = np.flatnonzero(y == label)
        if len(rows) < n_folds:
            raise StratificationError(f"class {label} has {len(rows)} rows, fewer than {n_folds} folds")
        fold[rng.permutation(rows)] = np.arange(len(rows)) % n_folds
    return fold


def _point_seed(seed: int, params: dict, fold: int) -> int:
    tag = zlib.crc32(json.dumps(params, sort_keys=True).encode())
    return int(np.random.SeedSequence([int(seed), tag, fold]).generate_state(1)[0])


@dataclass
class GridResult:
    best_params: dict
    best_score: float
    table: list

    def to_json(self) -> dict:
        return {"best_params": self.best_params, "best_score": self.best_score, "table": self.table}

    def to_csv(self) -> str:
        keys = sorted({k for row in self.table for k in row["params"]})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n_folds = max(len(r["fold_f1"]) for r in self.table)
        w.writerow([*keys, *[f"fold{i}_f1" for i in range(n_folds)], "mean_f1"])
        for r in self.table:
            w.writerow([*(r["params"].get(k, "") for k in keys), *(repr(v) for v in r["fold_f1"]), repr(r["mean_f1"])])
        return buf.getvalue()


def cross_validate(train: LabeledDataset, params: dict, folds: np.ndarray, seed: int, resample: bool = True) -> list:
    """F1 per fold; SMOTEENN touches only each fold's training rows."""
    scores = []
    groups = train.group_slices()
    for f in range(int(folds.max()) + 1):
        tr, va = folds != f, folds == f
        s = _point_seed(seed, params, f)
        X, y = train.X[tr], train.y[tr]
        if resample:
            X, y, _ = smoteenn(X, y, params.get("k_neighbors", 5), params.get("enn_n_neighbors", 3), seed=s, groups=groups)
        model = fit_forest(X, y, params.get("n_trees", 50), params.get("max_depth", 8), params.get("min_leaf", 1), s)
        scores.append(f1_score(train.y[va], model.predict(train.X[va])))
    return scores


def grid_search(
    train: LabeledDataset,
    param_grid: dict,
    cv_folds: int = 5,
    seed: int = 0,
    n_iter: int | None = None,
    base_params: dict | None = None,
    resample: bool = True,
) -> GridResult:
    """Maximise mean cross-validated F1 over ``param_grid``.

    With ``n_iter`` set, that many distinct grid points are drawn at random
    (seeded) instead of trying all of them. Ties go to the earlier grid point.
    ``base_params`` fills in parameters the grid does not vary.
    """
    points = [{**(base_params or {}), **p} for p in expand_grid(param_grid)]
    order = list(range(len(points)))
    if n_iter is not None:
        if not 1 <= n_iter <= len(points):
            raise ValidationError(f"n_iter must be in [1, {len(points)}]")
        rng = np.random.default_rng(seed)
        order = sorted(rng.choice(len(points), size=n_iter, replace=False).tolist())
    folds = stratified_folds(train.y, cv_folds, seed)
    table = []
    for i in order:
        fold_f1 = cross_validate(train, points[i], folds, seed, resample)
        table.append({"params": points[i], "fold_f1": fold_f1, "mean_f1": float(np.mean(fold_f1))})
    best = max(table, key=lambda r: r["mean_f1"])  # max keeps the first of equal scores
    return GridResult(best["params"], best["mean_f1"], table)


# explanations


def _feature_blocks(feature_names, groups: dict | None):
    """(report name, column indices) per explanatory unit; one-hot groups are one unit."""
    groups = groups or {}
    grouped = {j for cols in groups.values() for j in cols}
    blocks = [(name, [j]) for j, name in enumerate(feature_names) if j not in grouped]
    blocks += [(name, list(cols)) for name, cols in groups.items()]
    return sorted(blocks, key=lambda b: b[1][0])


def permutation_importance(model: ForestModel, test: LabeledDataset, n_repeats: int = 10, seed: int = 0) -> list:
    """Mean F1 drop when each feature (or one-hot group) is shuffled; largest first."""
    if test.n_rows < 2:
        raise ValidationError("need at least 2 rows")
    base = f1_score(test.y, model.predict(test.X))
    rng = np.random.default_rng(seed)
    out = []
    for name, cols in _feature_blocks(test.feature_names, test.groups):
        drops = []
        for _ in range(n_repeats):
            X = test.X.copy()
            X[:, cols] = X[rng.permutation(len(X))][:, cols]
            drops.append(base - f1_score(test.y, model.predict(X)))
        out.append((name, float(np.mean(drops))))
    return sorted(out, key=lambda item: -item[1])


@dataclass
class Explanation:
    instance_id: int
    weights: list  # (feature, coefficient), |coefficient| descending
    intercept: float
    r2: float | None
    flags: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "weights": [{"feature": f, "weight": w} for f, w in self.weights],
            "intercept": self.intercept,
            "r2": self.r2,
            "flags": self.flags,
        }

    def rank(self, feature: str) -> int:
        return [f for f, _ in self.weights].index(feature)


def lime_explain(
    model: ForestModel,
    instance,
    train: LabeledDataset,
    n_perturb: int = 1000,
    kernel_width: float | None = None,
    top_k: int | None = None,
    seed: int = 0,
    instance_id: int = 0,
) -> Explanation:
    """Local linear surrogate of the forest's vote fraction around ``instance``.

    Continuous coordinates get Gaussian noise with the training std; one-hot
    groups are redrawn from the training marginals and enter the surrogate as
    a single "same level as the instance" indicator. Samples are weighted by
    exp(-d^2 / width^2) on the standardized distance.
    """
    x = np.asarray(instance, dtype=float).ravel()
    if len(x) != model.n_features or train.X.shape[1] != model.n_features:
        raise SchemaError(f"instance has {len(x)} features, model expects {model.n_features}")
    rng = np.random.default_rng(seed)
    std = train.X.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    blocks = _feature_blocks(train.feature_names, train.groups)

    Z = np.repeat(x[None, :], n_perturb, axis=0)
    design = np.empty((n_perturb, len(blocks)))
    for b, (name, cols) in enumerate(blocks):
        if name in train.groups:
            freq = train.X[:, cols].mean(axis=0)
            freq = freq / freq.sum() if freq.sum() > 0 else np.full(len(cols), 1.0 / len(cols))
            level = rng.choice(len(cols), size=n_perturb, p=freq)
            onehot = np.zeros((n_perturb, len(cols)))
            onehot[np.arange(n_perturb), level] = 1.0
            Z[:, cols] = onehot
            design[:, b] = (level == int(np.argmax(x[cols]))).astype(float)
        else:
            j = cols[0]
            Z[:, j] = x[j] + rng.normal(0.0, std[j], size=n_perturb)
            design[:, b] = (Z[:, j] - x[j]) / scale[j]
    Z[0], design[0] = x, [1.0 if n in train.groups else 0.0 for n, _ in blocks]

    dist2 = np.sum(((Z - x) / scale) ** 2, axis=1)
    width = kernel_width if kernel_width is not None else 0.75 * math.sqrt(model.n_features)
    w = np.exp(-dist2 / width**2)
    target = model.predict_proba(Z)

    A = np.column_stack([np.ones(n_perturb), design])
    sw = np.sqrt(w)
    normal = A.T @ (A * w[:, None])
    rhs = A.T @ (w * target)
    flags = []
    if np.linalg.matrix_rank(normal) < normal.shape[0] or np.linalg.cond(normal) > 1e12:
        normal = normal + 1e-6 * np.diag([0.0] + [1.0] * len(blocks))
        flags.append("ridge_fallback")
    coef = np.linalg.solve(normal, rhs)

    resid = sw * (target - A @ coef)
    mean_w = np.sum(w * target) / np.sum(w)
    ss_tot = float(np.sum(w * (target - mean_w) ** 2))
    if ss_tot <= 1e-15:
        r2 = None
        flags.append("r2_undefined")
    else:
        r2 = float(1.0 - np.sum(resid**2) / ss_tot)
    weights = sorted(((name, float(c)) for (name, _), c in zip(blocks, coef[1:])), key=lambda fw: (-abs(fw[1]), fw[0]))
    if top_k is not None:
        weights = weights[:top_k]
    return Explanation(int(instance_id), weights, float(coef[0]), r2, flags)
