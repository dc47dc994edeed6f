"""Regression learners: CART, random forest, least-squares boosting and PLSR."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from ..errors import UnfittedModel
from .boost import DEFAULT_BOOST_DEPTH, DEFAULT_SHRINKAGE, BoostModel, fit_lsboost
from .forest import ForestModel, default_mtry, fit_random_forest
from .plsr import MAX_COMPONENTS, PLSRModel, fit_plsr, select_n_components
from .tree import DEFAULT_MAX_DEPTH, DEFAULT_MIN_SAMPLES_LEAF, RegressionTree, check_columns, fit_regression_tree

KINDS = ("tree", "forest", "lsboost", "plsr")
TREE_GRID = (20, 60, 100, 140, 180)


@dataclass(frozen=True)
class HyperParams:
    """Learner choice and settings.

    ``None`` fields resolve per learner: ``mtry`` to ceil(p/3) for forests and p
    otherwise, ``max_depth`` to 30 for single trees and forests and 4 for
    boosting, ``n_components`` to a 5-fold cross-validated choice.
    ``n_trees`` doubles as the stage count for boosting.
    """

    kind: str = "forest"
    n_trees: int = 140
    mtry: int | None = None
    max_depth: int | None = None
    min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF
    shrinkage: float = DEFAULT_SHRINKAGE
    n_components: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        for name in ("n_trees", "min_samples_leaf"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("mtry", "max_depth", "n_components"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValueError("shrinkage must lie in (0, 1]")

    def resolved_mtry(self, n_features: int) -> int:
        if self.mtry is not None:
            return min(self.mtry, n_features)
        return default_mtry(n_features) if self.kind == "forest" else n_features

    def resolved_max_depth(self) -> int:
        if self.max_depth is not None:
            return self.max_depth
        return DEFAULT_BOOST_DEPTH if self.kind == "lsboost" else DEFAULT_MAX_DEPTH

    def with_(self, **changes) -> "HyperParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


Model = RegressionTree | ForestModel | BoostModel | PLSRModel


def fit_model(X, Y, params: HyperParams, *, jobs: int = 1) -> Model:
    """Fit the learner named by ``params.kind``; tree learners need a single response."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if params.kind == "plsr":
        a = params.n_components
        if a is None:
            a = select_n_components(X, Y, max_components=MAX_COMPONENTS, seed=params.seed)
        return fit_plsr(X, Y, a)
    if Y.ndim == 2:
        if Y.shape[1] != 1:
            raise ValueError(f"{params.kind} fits one response at a time")
        Y = Y[:, 0]
    p = X.shape[1] if X.ndim == 2 else 1
    common = dict(max_depth=params.resolved_max_depth(), min_samples_leaf=params.min_samples_leaf, mtry=params.resolved_mtry(p), seed=params.seed)
    if params.kind == "tree":
        return fit_regression_tree(X, Y, **common)
    if params.kind == "forest":
        return fit_random_forest(X, Y, n_trees=params.n_trees, bootstrap=params.bootstrap, jobs=jobs, **common)
    return fit_lsboost(X, Y, n_stages=params.n_trees, shrinkage=params.shrinkage, **common)


def predict(model: Model, X) -> np.ndarray:
    """Predictions as an (n, responses) matrix, in the targets' (log1p) space."""
    if model is None:
        raise UnfittedModel("no model")
    out = model.predict(X)
    return out[:, None] if out.ndim == 1 else out


def truncate(model: Model, n: int) -> Model:
    """First ``n`` trees of a forest or first ``n`` stages of a boosted model."""
    if isinstance(model, (ForestModel, BoostModel)):
        return model.truncate(n)
    raise TypeError(f"cannot truncate {type(model).__name__}")


def feature_importance(model, feature_names: Sequence[str] | None = None) -> dict[str, float]:
    """Share of the total training SSE reduction credited to each feature.

    Sums split gains over every tree of a forest (or boosted model, or a single
    tree) and normalises to 1.  Features never split on get 0.  If no tree
    split at all every weight is 0.
    """
    if isinstance(model, RegressionTree):
        trees, p = (model,), model.n_features
    elif isinstance(model, (ForestModel, BoostModel)):
        trees, p = model.trees, model.n_features
    else:
        raise UnfittedModel(f"{type(model).__name__} is not a fitted tree ensemble")
    if not trees:
        raise UnfittedModel("model has no trees")
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(p)]
    if len(names) != p:
        raise ValueError(f"{len(names)} names for {p} features")
    totals = np.zeros(p)
    for tree in trees:
        split = tree.feature >= 0
        np.add.at(totals, tree.feature[split], tree.gain[split])
    s = totals.sum()
    if s > 0:
        totals = totals / s
    return dict(zip(names, totals.tolist()))


__all__ = [
    "KINDS",
    "TREE_GRID",
    "BoostModel",
    "ForestModel",
    "HyperParams",
    "Model",
    "PLSRModel",
    "RegressionTree",
    "check_columns",
    "feature_importance",
    "fit_lsboost",
    "fit_model",
    "fit_plsr",
    "fit_random_forest",
    "fit_regression_tree",
    "predict",
    "select_n_components",
    "truncate",
]
