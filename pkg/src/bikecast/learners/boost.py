"""Least-squares boosting of regression trees."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .forest import tree_seeds
from .tree import DEFAULT_MIN_SAMPLES_LEAF, RegressionTree, check_columns, check_xy, code_features, grow

logger = logging.getLogger(__name__)

DEFAULT_BOOST_DEPTH = 4
DEFAULT_SHRINKAGE = 0.1


@dataclass(frozen=True, eq=False)
class BoostModel:
    """``f0 + sum_i shrinkage * betas[i] * trees[i](x)``.

    ``inert[i]`` is set when tree ``i`` predicted zero everywhere on the
    training rows; its coefficient is then 0.
    """

    f0: float
    trees: tuple[RegressionTree, ...]
    betas: np.ndarray
    inert: np.ndarray
    shrinkage: float
    n_features: int
    mtry: int
    seed: int = 0
    max_depth: int = DEFAULT_BOOST_DEPTH
    min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF

    def __post_init__(self):
        self.betas.setflags(write=False)
        self.inert.setflags(write=False)

    @property
    def n_stages(self) -> int:
        return len(self.trees)

    def staged_predict(self, X):
        """Yield the cumulative prediction after each stage (stage 0 is ``f0``)."""
        X = check_columns(X, self.n_features)
        out = np.full(X.shape[0], self.f0)
        yield out.copy()
        for tree, beta in zip(self.trees, self.betas):
            out = out + self.shrinkage * beta * tree.predict(X)
            yield out.copy()

    def predict(self, X) -> np.ndarray:
        X = check_columns(X, self.n_features)
        out = np.full(X.shape[0], self.f0)
        for tree, beta in zip(self.trees, self.betas):
            out = out + self.shrinkage * beta * tree.predict(X)
        return out

    def truncate(self, n_stages: int) -> "BoostModel":
        if not 0 <= n_stages <= self.n_stages:
            raise ValueError(f"n_stages must be within 0..{self.n_stages}")
        return replace(self, trees=self.trees[:n_stages], betas=self.betas[:n_stages].copy(), inert=self.inert[:n_stages].copy())


def fit_lsboost(
    X,
    y,
    *,
    n_stages: int = 140,
    shrinkage: float = DEFAULT_SHRINKAGE,
    max_depth: int = DEFAULT_BOOST_DEPTH,
    min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF,
    mtry: int | None = None,
    seed: int = 0,
) -> BoostModel:
    """Stagewise squared-loss boosting.

    Starts from the mean of ``y``.  Each stage fits a tree ``h`` to the current
    residuals ``r`` and scales it by ``beta = <r, h> / <h, h>``, the zero of the
    derivative of the stage's squared error in ``beta``; the running prediction
    then moves by ``shrinkage * beta * h``.
    """
    X, y = check_xy(X, y)
    if n_stages < 0:
        raise ValueError("n_stages must be >= 0")
    if not 0.0 < shrinkage <= 1.0:
        raise ValueError("shrinkage must lie in (0, 1]")
    n, p = X.shape
    mtry = p if mtry is None else int(mtry)
    if not 1 <= mtry <= p:
        raise ValueError(f"mtry must be within 1..{p}")
    coded = code_features(X)
    rows = np.arange(n, dtype=np.int64)
    ones = np.ones(n)
    seeds = tree_seeds(seed, n_stages)
    f0 = float(y.mean())
    F = np.full(n, f0)
    trees, betas, inert = [], np.zeros(n_stages), np.zeros(n_stages, dtype=bool)
    for i in range(n_stages):
        r = y - F
        kernel_seed = int(seeds[i].generate_state(1, dtype=np.uint32)[0] >> 1)
        tree, leaf_of = grow(coded, r, ones, rows, mtry, max_depth, min_samples_leaf, kernel_seed)
        h = tree.value[leaf_of]
        hh = float(np.dot(h, h))
        if hh == 0.0:
            inert[i] = True
            logger.debug("stage %d is inert", i)
        else:
            betas[i] = float(np.dot(r, h)) / hh
        F = F + shrinkage * betas[i] * h
        trees.append(tree)
    return BoostModel(f0, tuple(trees), betas, inert, float(shrinkage), p, mtry, seed, max_depth, min_samples_leaf)
