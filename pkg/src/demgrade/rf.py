"""Random forest of bootstrapped Gini trees with hard majority voting."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Union

import numpy as np

from ._parallel import ordered_map
from .errors import ArgumentError

N_CLASSES = 4


@dataclass(frozen=True)
class RfConfig:
    n_trees: int = 100
    max_depth: int | None = 16
    features_per_split: int | None = None  # None -> floor(sqrt(n_features))
    seed: int = 0
    bootstrap: bool = True  # False: every tree sees all rows once

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Leaf:
    counts: tuple[int, ...]

    @property
    def prediction(self):
        return int(np.argmax(self.counts))


@dataclass(frozen=True)
class Node:
    feature: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Node]


class Split(NamedTuple):
    feature: int
    threshold: float
    impurity: float  # weighted child Gini


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[TreeNode, ...]
    n_features: int
    config: RfConfig
    n_classes: int = N_CLASSES


def gini_impurity(labels, n_classes=None) -> float:
    """``1 - sum_c p_c**2`` over the class frequencies of ``labels``."""
    y = np.asarray(labels, dtype=np.int64)
    if y.size == 0:
        raise ArgumentError("gini impurity of an empty label set is undefined")
    counts = np.bincount(y, minlength=n_classes or 0)
    p = counts / y.size
    return float(1.0 - np.sum(p * p))


def _gini_from_counts(counts, n):
    return 1.0 - float(np.sum(counts.astype(np.float64) ** 2)) / (n * n)


def best_split(X, y, candidate_features, n_classes=None) -> Split | None:
    """Best axis-aligned split among ``candidate_features``.

    Thresholds are midpoints between consecutive distinct sorted values. The
    weighted child Gini is minimized; ties prefer the lower feature index,
    then the lower threshold. Returns None when no threshold strictly lowers
    the impurity of the parent.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    if n < 2:
        return None
    k = n_classes or int(y.max()) + 1
    parent_counts = np.bincount(y, minlength=k)
    parent = _gini_from_counts(parent_counts, n)
    if parent == 0.0:
        return None
    feats = np.array(sorted(set(int(f) for f in candidate_features)), dtype=np.int64)
    if feats.size == 0:
        return None
    cols = X[:, feats]
    order = np.argsort(cols, axis=0, kind="stable")
    vals = np.take_along_axis(cols, order, axis=0)
    onehot = np.eye(k, dtype=np.int64)[y]
    left = np.cumsum(onehot[order], axis=0)[:-1]  # (n-1, f, k)
    right = parent_counts[None, None, :] - left
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    purity = (left * left).sum(axis=2) / n_left + (right * right).sum(axis=2) / n_right
    weighted = (n - purity) / n  # (n-1, f)
    valid = vals[:-1] < vals[1:]
    weighted = np.where(valid, weighted, np.inf)
    flat = weighted.T.ravel()  # feature-major so argmin honours the tie order
    best = int(np.argmin(flat))
    score = flat[best]
    if not np.isfinite(score) or score >= parent - 1e-12:
        return None
    j, i = divmod(best, n - 1)
    threshold = (vals[i, j] + vals[i + 1, j]) / 2.0
    return Split(int(feats[j]), float(threshold), float(score))


def _tree_rng(seed, tree_index):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(tree_index)])))


def _grow(X, y, rows, depth, max_depth, m, n_classes, rng):
    counts = np.bincount(y[rows], minlength=n_classes)
    if (max_depth is not None and depth >= max_depth) or np.count_nonzero(counts) <= 1 or len(rows) < 2:
        return Leaf(tuple(int(c) for c in counts))
    feats = rng.choice(X.shape[1], size=m, replace=False)
    split = best_split(X[rows], y[rows], feats, n_classes)
    if split is None:
        return Leaf(tuple(int(c) for c in counts))
    go_left = X[rows, split.feature] <= split.threshold
    return Node(
        split.feature,
        split.threshold,
        _grow(X, y, rows[go_left], depth + 1, max_depth, m, n_classes, rng),
        _grow(X, y, rows[~go_left], depth + 1, max_depth, m, n_classes, rng),
    )


def fit_tree(X, y, tree_index, config: RfConfig, n_classes=N_CLASSES) -> TreeNode:
    rng = _tree_rng(config.seed, tree_index)
    n, d = X.shape
    rows = rng.integers(0, n, size=n) if config.bootstrap else np.arange(n)
    m = config.features_per_split or max(1, math.isqrt(d))
    return _grow(X, y, np.sort(rows), 0, config.max_depth, min(m, d), n_classes, rng)


def fit_forest(X, y, config: RfConfig | None = None, n_classes=N_CLASSES) -> ForestModel:
    """Train ``config.n_trees`` trees, each on its own bootstrap sample.

    Tree ``t`` draws all of its randomness (bootstrap rows and per-node
    feature subsets) from PCG-64 seeded with ``(config.seed, t)``, so the
    forest is identical whether trees are built serially or in parallel.
    """
    config = config or RfConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise ArgumentError(f"X {X.shape} and y {y.shape} must be non-empty and aligned")
    if y.min() < 0 or y.max() >= n_classes:
        raise ArgumentError(f"labels must lie in [0, {n_classes})")
    trees = ordered_map(lambda t: fit_tree(X, y, t, config, n_classes), range(config.n_trees))
    return ForestModel(tuple(trees), X.shape[1], config, n_classes)


def tree_predict(node: TreeNode, x) -> int:
    while isinstance(node, Node):
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.prediction


def _tree_predict_batch(node, X, rows, out):
    if isinstance(node, Leaf):
        out[rows] = node.prediction
        return
    go_left = X[rows, node.feature] <= node.threshold
    _tree_predict_batch(node.left, X, rows[go_left], out)
    _tree_predict_batch(node.right, X, rows[~go_left], out)


def forest_votes(model: ForestModel, X) -> np.ndarray:
    """Vote counts, shape ``(n_samples, n_classes)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ArgumentError(f"expected samples with {model.n_features} features, got shape {X.shape}")
    votes = np.zeros((len(X), model.n_classes), dtype=np.int64)
    pred = np.empty(len(X), dtype=np.int64)
    rows = np.arange(len(X))
    for tree in model.trees:
        _tree_predict_batch(tree, X, rows, pred)
        votes[rows, pred] += 1
    return votes


def forest_predict(model: ForestModel, x):
    """Return ``(class, votes)`` for one sample; vote ties go to the lowest class."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.n_features:
        raise ArgumentError(f"expected {model.n_features} features, got shape {x.shape}")
    votes = forest_votes(model, x[None, :])[0]
    return int(np.argmax(votes)), votes.tolist()


def predict(model: ForestModel, X) -> np.ndarray:
    return np.argmax(forest_votes(model, X), axis=1)


def tree_depth(node: TreeNode) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


# -- JSON records ------------------------------------------------------------


def node_to_record(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": list(node.counts)}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": node_to_record(node.left),
        "right": node_to_record(node.right),
    }


def node_from_record(rec: dict) -> TreeNode:
    if "leaf" in rec:
        return Leaf(tuple(int(c) for c in rec["leaf"]))
    return Node(
        int(rec["feature"]),
        float(rec["threshold"]),
        node_from_record(rec["left"]),
        node_from_record(rec["right"]),
    )
