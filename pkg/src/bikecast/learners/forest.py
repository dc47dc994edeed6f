"""Random forest regression built on the CART kernel."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ..errors import UnfittedModel
from .tree import DEFAULT_MAX_DEPTH, DEFAULT_MIN_SAMPLES_LEAF, RegressionTree, check_columns, check_xy, code_features, grow


def default_mtry(n_features: int) -> int:
    return max(1, math.ceil(n_features / 3))


def tree_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    # child i depends only on (seed, i), so a forest's first k trees equal a k-tree forest
    return np.random.SeedSequence(seed).spawn(n)


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[RegressionTree, ...]
    n_trees: int
    mtry: int
    bootstrap: bool
    seed: int
    n_features: int
    max_depth: int = DEFAULT_MAX_DEPTH
    min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF

    def predict(self, X) -> np.ndarray:
        if not self.trees:
            raise UnfittedModel("forest has no trees")
        X = check_columns(X, self.n_features)
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict(X)
        return total / len(self.trees)

    def truncate(self, n_trees: int) -> "ForestModel":
        """The forest made of the first ``n_trees`` trees.

        Identical to fitting with ``n_trees`` directly under the same seed.
        """
        if not 1 <= n_trees <= self.n_trees:
            raise ValueError(f"n_trees must be within 1..{self.n_trees}")
        return replace(self, trees=self.trees[:n_trees], n_trees=n_trees)


def fit_random_forest(
    X,
    y,
    *,
    n_trees: int = 140,
    mtry: int | None = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
    min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF,
    bootstrap: bool = True,
    seed: int = 0,
    jobs: int = 1,
) -> ForestModel:
    """Bagged regression trees with ``mtry`` candidate features per split.

    Each tree sees a bootstrap resample of size n (unless ``bootstrap`` is off)
    and its own seed derived from ``seed``; the result is a pure function of the
    data and the arguments, whatever ``jobs`` is.
    """
    X, y = check_xy(X, y)
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    n, p = X.shape
    mtry = default_mtry(p) if mtry is None else int(mtry)
    if not 1 <= mtry <= p:
        raise ValueError(f"mtry must be within 1..{p}")
    coded = code_features(X)
    seeds = tree_seeds(seed, n_trees)

    def one(i: int) -> RegressionTree:
        ss = seeds[i]
        kernel_seed = int(ss.generate_state(1, dtype=np.uint32)[0] >> 1)
        if bootstrap:
            rng = np.random.default_rng(ss)
            weights = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)
            rows = np.flatnonzero(weights)
        else:
            weights, rows = np.ones(n), np.arange(n, dtype=np.int64)
        tree, _ = grow(coded, y, weights, rows, mtry, max_depth, min_samples_leaf, kernel_seed)
        return tree

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trees = tuple(pool.map(one, range(n_trees)))
    else:
        trees = tuple(one(i) for i in range(n_trees))
    return ForestModel(trees, n_trees, mtry, bootstrap, seed, p, max_depth, min_samples_leaf)
