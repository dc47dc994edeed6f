"""CART regression tree under squared error."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, EmptyDataset
from . import _kernels

DEFAULT_MAX_DEPTH = 30
DEFAULT_MIN_SAMPLES_LEAF = 5


def check_xy(X, y=None):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise EmptyDataset(f"need a non-empty 2-D design matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("design matrix contains non-finite values")
    if y is None:
        return X
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != X.shape[0]:
        raise DimensionMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets contain non-finite values")
    return X, y


def check_columns(X, n_features: int) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != n_features:
        raise DimensionMismatch(f"model expects {n_features} features, got {X.shape[1]}")
    return X


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf.

    Internal node ``k`` sends ``x`` left when ``x[feature[k]] <= threshold[k]``.
    ``gain[k]`` is the drop in training SSE achieved by the split at ``k``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    gain: np.ndarray
    n_features: int
    max_depth: int = DEFAULT_MAX_DEPTH
    min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF

    def __post_init__(self):
        for name in ("feature", "threshold", "left", "right", "value", "n_samples", "gain"):
            getattr(self, name).setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                depth[self.left[k]] = depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    def predict(self, X) -> np.ndarray:
        X = check_columns(X, self.n_features)
        return _kernels.predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value)

    def apply(self, X) -> np.ndarray:
        """Leaf id reached by each row."""
        X = check_columns(X, self.n_features)
        return _kernels.apply_tree(X, self.feature, self.threshold, self.left, self.right)


def grow(coded, y, weights, rows, mtry, max_depth, min_samples_leaf, seed):
    """Grow one tree on coded features (from ``code_features``).

    ``weights[r]`` copies of row ``r`` take part for each ``r`` in ``rows``.
    Returns the tree and the leaf id of every row (-1 for rows left out).
    """
    codes, values, n_bins = coded
    feature, threshold, left, right, value, n_samples, gain, leaf_of = _kernels.grow_tree(
        codes, values, n_bins, y, weights, rows, int(mtry), int(max_depth), int(min_samples_leaf), int(seed)
    )
    tree = RegressionTree(feature, threshold, left, right, value, n_samples, gain, codes.shape[0], max_depth, min_samples_leaf)
    return tree, leaf_of


def code_features(X):
    """``(codes, values, n_bins)``: each feature as ranks into its sorted distinct values."""
    return _kernels.code_features(X)


def fit_regression_tree(
    X,
    y,
    *,
    max_depth: int = DEFAULT_MAX_DEPTH,
    min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF,
    mtry: int | None = None,
    seed: int = 0,
) -> RegressionTree:
    """Fit a regression tree by exhaustive squared-error split search.

    Candidate thresholds are midpoints between consecutive distinct values of a
    feature.  At each node ``mtry`` features are drawn without replacement
    (all of them by default) and the split minimising the summed child SSE is
    taken.  Growth stops at ``max_depth``, when a child would hold fewer than
    ``min_samples_leaf`` rows, or when no split reduces the SSE.
    """
    X, y = check_xy(X, y)
    if max_depth < 0 or min_samples_leaf < 1:
        raise ValueError("max_depth must be >= 0 and min_samples_leaf >= 1")
    p = X.shape[1]
    mtry = p if mtry is None else int(mtry)
    if not 1 <= mtry <= p:
        raise ValueError(f"mtry must be within 1..{p}")
    n = X.shape[0]
    tree, _ = grow(code_features(X), y, np.ones(n), np.arange(n, dtype=np.int64), mtry, max_depth, min_samples_leaf, seed)
    return tree
