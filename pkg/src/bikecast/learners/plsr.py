"""Partial least-squares regression for several responses at once."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConvergenceFailure, DimensionMismatch, EmptyDataset
from .tree import check_columns

MAX_COMPONENTS = 20


@dataclass(frozen=True, eq=False)
class PLSRModel:
    """Fitted two-block latent model.

    ``weights``, ``x_loadings`` (features x A) and ``y_loadings`` (responses x A)
    live in the centred (and, if enabled, unit-variance) predictor space.
    ``coef`` maps raw centred predictors to centred responses, so
    ``predict(x) = (x - x_mean) @ coef + y_mean``.
    """

    n_components: int
    x_mean: np.ndarray
    y_mean: np.ndarray
    x_scale: np.ndarray
    weights: np.ndarray
    x_loadings: np.ndarray
    y_loadings: np.ndarray
    coef: np.ndarray

    def __post_init__(self):
        for name in ("x_mean", "y_mean", "x_scale", "weights", "x_loadings", "y_loadings", "coef"):
            getattr(self, name).setflags(write=False)

    @property
    def n_features(self) -> int:
        return self.x_mean.size

    @property
    def n_responses(self) -> int:
        return self.y_mean.size

    def rotations(self) -> np.ndarray:
        """``W (P'W)^-1``: maps scaled centred predictors straight to scores."""
        return self.weights @ np.linalg.inv(self.x_loadings.T @ self.weights)

    def transform(self, X) -> np.ndarray:
        X = check_columns(X, self.n_features)
        return ((X - self.x_mean) / self.x_scale) @ self.rotations()

    def predict(self, X) -> np.ndarray:
        X = check_columns(X, self.n_features)
        return (X - self.x_mean) @ self.coef + self.y_mean


def _as_2d(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    return Y[:, None] if Y.ndim == 1 else Y


def fit_plsr(
    X,
    Y,
    n_components: int,
    *,
    scale: bool = True,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> PLSRModel:
    """Fit PLS regression by the iterative two-block (NIPALS) procedure.

    For each component the X-weights and Y-scores are refined alternately until
    the X-score vector changes by less than ``tol`` relative to its norm; both
    blocks are then deflated by the new score.  With ``scale`` the predictors are
    divided by their standard deviations first (folded back into ``coef``).

    The inner loop is a power iteration, so it slows down when the two largest
    singular values of the residual cross-covariance nearly tie; ``max_iter``
    is generous for that reason.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = _as_2d(Y)
    if X.ndim != 2 or X.size == 0:
        raise EmptyDataset("empty predictor block")
    n, p = X.shape
    if Y.shape[0] != n:
        raise DimensionMismatch(f"X has {n} rows but Y has {Y.shape[0]}")
    if not 1 <= n_components <= min(n - 1, p):
        raise ValueError(f"n_components must be within 1..{min(n - 1, p)}")
    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    x_scale = X.std(axis=0, ddof=1) if scale else np.ones(p)
    x_scale = np.where(x_scale > 0, x_scale, 1.0)
    E = (X - x_mean) / x_scale
    F = Y - y_mean

    W = np.zeros((p, n_components))
    P = np.zeros((p, n_components))
    Q = np.zeros((Y.shape[1], n_components))
    for a in range(n_components):
        u = F[:, np.argmax((F * F).sum(axis=0))].copy()
        t_old = None
        for _ in range(max_iter):
            w = E.T @ u
            norm = np.linalg.norm(w)
            if norm == 0.0:
                raise ConvergenceFailure(f"component {a + 1}: no covariance left between blocks")
            w /= norm
            t = E @ w
            tt = t @ t
            q = F.T @ t / tt
            qq = q @ q
            if qq == 0.0:
                break
            u = F @ q / qq
            if t_old is not None and np.linalg.norm(t - t_old) <= tol * np.linalg.norm(t):
                break
            t_old = t
        else:
            raise ConvergenceFailure(f"component {a + 1} did not converge in {max_iter} iterations")
        p_load = E.T @ t / tt
        E = E - np.outer(t, p_load)
        F = F - np.outer(t, q)
        W[:, a], P[:, a], Q[:, a] = w, p_load, q

    R = W @ np.linalg.inv(P.T @ W)
    coef = (R @ Q.T) / x_scale[:, None]
    return PLSRModel(n_components, x_mean, y_mean, x_scale, W, P, Q, coef)


def select_n_components(
    X,
    Y,
    *,
    max_components: int = MAX_COMPONENTS,
    folds: int = 5,
    seed: int = 0,
    scale: bool = True,
) -> int:
    """Component count with the lowest cross-validated squared error."""
    X = np.asarray(X, dtype=np.float64)
    Y = _as_2d(Y)
    n, p = X.shape
    order = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(order, folds)
    rank = np.linalg.matrix_rank(X - X.mean(axis=0))
    limit = min(max_components, rank, min(n - part.size for part in parts) - 1)
    if limit < 1:
        raise ValueError("too few rows to choose a component count")
    models = []
    for part in parts:
        train = np.setdiff1d(order, part, assume_unique=True)
        while True:
            try:
                models.append(fit_plsr(X[train], Y[train], limit, scale=scale))
                break
            except ConvergenceFailure:
                # drop the candidate counts that cannot be extracted on this fold
                if limit == 1:
                    raise
                limit -= 1
    press = np.zeros(limit)
    for part, model in zip(parts, models):
        Xc = (X[part] - model.x_mean) / model.x_scale
        # a model truncated to its first a components is the a-component fit
        for a in range(1, limit + 1):
            Ra = model.weights[:, :a] @ np.linalg.inv(model.x_loadings[:, :a].T @ model.weights[:, :a])
            pred = Xc @ Ra @ model.y_loadings[:, :a].T + model.y_mean
            press[a - 1] += float(((Y[part] - pred) ** 2).sum())
    return int(np.argmin(press) + 1)
