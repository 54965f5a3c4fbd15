"""
Regression Forest

From-scratch regression-tree ensemble plus the input standardizer. Shared by the
optimizer surrogate and the noise model ("RandomForestRegressor o Standardize").

Trees use axis-aligned splits chosen by variance reduction, thresholds at midpoints
between consecutive unique feature values. Bootstrap resampling is expressed as
per-row Poisson(1) weights hashed from (seed, tree, row id), so a fit depends on the
set of rows and not on their order.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, ValidationError
from .seeding import derive_seed

# Poisson(1) CDF, truncated where the tail mass is below double precision
_POISSON_CDF = np.cumsum([math.exp(-1.0) / math.factorial(k) for k in range(20)])


@dataclass
class ForestParams:
    tree_count: int = 100
    min_leaf: int = 3
    max_features: Optional[int] = None  # None -> ceil(sqrt(d)) per split
    bootstrap: bool = True
    max_depth: Optional[int] = None

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValidationError(f"tree_count must be >= 1, got {self.tree_count}")
        if self.min_leaf < 1:
            raise ValidationError(f"min_leaf must be >= 1, got {self.min_leaf}")


class Standardizer:
    """Per-feature z-scoring. Zero-variance features map to 0."""

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=float)
        self.std = np.asarray(std, dtype=float)
        self._scale = np.where(self.std > 0, self.std, 1.0)

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return cls(X.mean(axis=0), X.std(axis=0))

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        Z = (X - self.mean) / self._scale
        return np.where(self.std > 0, Z, 0.0)

    def inverse_transform(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        return np.where(self.std > 0, Z * self._scale + self.mean, self.mean)


@dataclass
class RegressionTree:
    """Array-encoded binary tree; feature == -1 marks a leaf."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def leaf(cls, value: float) -> "RegressionTree":
        return cls(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([float(value)]))

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=int)
        while True:
            feat = self.feature[node]
            active = np.nonzero(feat >= 0)[0]
            if active.size == 0:
                return self.value[node]
            current = node[active]
            go_left = X[active, feat[active]] <= self.threshold[current]
            node[active] = np.where(go_left, self.left[current], self.right[current])


@dataclass
class ForestModel:
    trees: List[RegressionTree]
    params: ForestParams = field(default_factory=ForestParams)
    seed: int = 0
    n_features: int = 0

    def per_tree(self, X) -> np.ndarray:
        """(tree_count, n_rows) matrix of per-tree predictions."""
        X = self._check_matrix(X)
        return np.vstack([tree.predict(X) for tree in self.trees])

    def predict_many(self, X) -> np.ndarray:
        return self.per_tree(X).mean(axis=0)

    def predict(self, x) -> float:
        return float(self.predict_many(self._check_vector(x))[0])

    def predict_with_uncertainty(self, x) -> Tuple[float, float]:
        preds = self.per_tree(self._check_vector(x))[:, 0]
        return float(preds.mean()), float(preds.std())

    def _check_vector(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.shape[0] != self.n_features:
            raise ValidationError(f"Expected vector of width {self.n_features}, got shape {x.shape}")
        return x[None, :]

    def _check_matrix(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValidationError(f"Expected matrix of width {self.n_features}, got shape {X.shape}")
        return X


# ============= TREE CONSTRUCTION =============

def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return x ^ (x >> np.uint64(31))


def bootstrap_weights(seed: int, tree_index: int, row_ids: np.ndarray) -> np.ndarray:
    """Poisson(1) resampling counts, a pure function of (seed, tree, row id)."""
    key = np.uint64(derive_seed(seed, "bootstrap", tree_index))
    hashed = _splitmix64(np.asarray(row_ids, dtype=np.int64).astype(np.uint64) ^ key)
    uniforms = (hashed >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    return np.searchsorted(_POISSON_CDF, uniforms, side="right").astype(float)


def _leaf_value(y: np.ndarray, w: np.ndarray) -> float:
    if y.max() == y.min():
        return float(y[0])
    return float(np.dot(w, y) / w.sum())


def _best_split(X: np.ndarray, y: np.ndarray, w: np.ndarray, features: np.ndarray,
                min_leaf: int) -> Optional[Tuple[int, float]]:
    """Best (feature, threshold) by weighted SSE reduction, or None."""
    m = X.shape[0]
    Xf = X[:, features]
    order = np.argsort(Xf, axis=0, kind="stable")
    xs = np.take_along_axis(Xf, order, axis=0)
    ws = w[order]
    wy = ws * y[order]

    cw = np.cumsum(ws, axis=0)[:-1]
    cwy = np.cumsum(wy, axis=0)[:-1]
    total_w = ws.sum(axis=0)
    total_wy = wy.sum(axis=0)
    right_w = total_w - cw
    right_wy = total_wy - cwy

    position = np.arange(1, m)[:, None]
    valid = (xs[:-1] < xs[1:]) & (position >= min_leaf) & (m - position >= min_leaf)
    valid &= (cw > 0) & (right_w > 0)
    if not valid.any():
        return None

    with np.errstate(divide="ignore", invalid="ignore"):
        score = cwy ** 2 / cw + right_wy ** 2 / right_w
    score = np.where(valid, score, -np.inf)
    flat = int(np.argmax(score))
    i, j = divmod(flat, len(features))

    parent = total_wy[j] ** 2 / total_w[j]
    sse_parent = float(np.dot(w, y ** 2) - parent)
    gain = float(score[i, j] - parent)
    if gain <= 1e-12 * max(sse_parent, 1e-300) or gain <= 0:
        return None

    low, high = xs[i, j], xs[i + 1, j]
    threshold = (low + high) / 2.0
    if not low <= threshold < high:
        threshold = low
    return int(features[j]), float(threshold)


def _build_tree(X: np.ndarray, y: np.ndarray, w: np.ndarray, params: ForestParams,
                rng: np.random.Generator) -> RegressionTree:
    n_features = X.shape[1]
    k = params.max_features or max(1, math.ceil(math.sqrt(n_features)))

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node() -> int:
        for column in (feature, threshold, left, right, value):
            column.append(0)
        feature[-1] = -1
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, rows, depth = stack.pop()
        y_node, w_node = y[rows], w[rows]
        value[node] = _leaf_value(y_node, w_node)

        if len(rows) < 2 * params.min_leaf or y_node.max() == y_node.min():
            continue
        if params.max_depth is not None and depth >= params.max_depth:
            continue

        X_node = X[rows]
        varying = np.nonzero(X_node.max(axis=0) > X_node.min(axis=0))[0]
        if varying.size == 0:
            continue
        features = np.sort(rng.choice(varying, size=min(k, varying.size), replace=False))
        split = _best_split(X_node, y_node, w_node, features, params.min_leaf)
        if split is None:
            continue

        f, thr = split
        go_left = X_node[:, f] <= thr
        left_node, right_node = new_node(), new_node()
        feature[node], threshold[node] = f, thr
        left[node], right[node] = left_node, right_node
        # Right pushed first so the left subtree is built (and draws from rng) first
        stack.append((right_node, rows[~go_left], depth + 1))
        stack.append((left_node, rows[go_left], depth + 1))

    return RegressionTree(
        feature=np.array(feature, dtype=int),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=int),
        right=np.array(right, dtype=int),
        value=np.array(value, dtype=float),
    )


def _fit_one_tree(X, y, row_ids, params: ForestParams, seed: int, tree_index: int) -> RegressionTree:
    rng = np.random.default_rng(derive_seed(seed, "tree", tree_index))
    if params.bootstrap:
        weights = bootstrap_weights(seed, tree_index, row_ids)
        if weights.sum() == 0:
            weights = np.ones(len(y))
    else:
        weights = np.ones(len(y))
    keep = weights > 0
    return _build_tree(X[keep], y[keep], weights[keep], params, rng)


# ============= OPERATIONS =============

def fit(X, y, params: Optional[ForestParams] = None, seed: int = 0,
        row_ids: Optional[Sequence[int]] = None, max_workers: int = 1) -> ForestModel:
    """
    Fit a forest.

    Args:
        X: (n_rows, n_features) training inputs
        y: (n_rows,) targets
        params: forest hyperparameters (defaults: 100 trees, min_leaf 3, sqrt(d) features)
        seed: run-level seed; tree i draws from a stream derived from (seed, i)
        row_ids: stable identifiers of the rows (default: positions)
        max_workers: trees fitted in parallel when > 1

    Returns:
        ForestModel
    """
    params = params or ForestParams()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1:
        raise ValidationError(f"Expected 2-D X and 1-D y, got {X.shape} and {y.shape}")
    if X.shape[0] != y.shape[0]:
        raise ValidationError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] == 0:
        raise DomainError("Cannot fit a forest on empty data")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValidationError("Training data contains NaN or infinite values")

    row_ids = np.arange(len(y)) if row_ids is None else np.asarray(row_ids, dtype=np.int64)
    if row_ids.shape != y.shape or len(np.unique(row_ids)) != len(row_ids):
        raise ValidationError("row_ids must be unique and match the number of rows")

    # Rows kept in row-id order so ties and splits do not depend on input order
    order = np.argsort(row_ids, kind="stable")
    X, y, row_ids = X[order], y[order], row_ids[order]

    def fit_tree(t: int) -> RegressionTree:
        return _fit_one_tree(X, y, row_ids, params, seed, t)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            trees = list(executor.map(fit_tree, range(params.tree_count)))
    else:
        trees = [fit_tree(t) for t in range(params.tree_count)]

    return ForestModel(trees=trees, params=params, seed=seed, n_features=X.shape[1])


def predict(model: ForestModel, x) -> float:
    return model.predict(x)


def predict_with_uncertainty(model: ForestModel, x) -> Tuple[float, float]:
    """Mean and population stddev of the per-tree predictions."""
    return model.predict_with_uncertainty(x)
