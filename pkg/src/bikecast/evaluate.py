"""Cross-validated error in bike units and the horizon / tree-count / memory sweeps."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import LengthMismatch, TooFewRows
from .features import (
    RegionDataset,
    StationDataset,
    WeatherTable,
    build_region_dataset,
    build_station_dataset,
    to_bikes,
)
from .ingest import SnapshotGrid
from .learners import HyperParams, fit_model, predict, truncate
from .network import NeighborSet, RegionPartition

logger = logging.getLogger(__name__)

HORIZON_GRID = (15, 30, 45, 60, 75, 90, 105, 120)
TREE_GRID = (20, 60, 100, 140, 180)
MEMORY_GRID = (0, 1, 2, 3, 4, 5, 6, 7)
AXES = ("horizon", "trees", "memory")
FIGURE_NAMES = {
    ("horizon", "forest"): "fig2_rf_horizon_trees",
    ("horizon", "lsboost"): "fig3_lsboost_horizon_trees",
    ("horizon", "plsr"): "fig8_plsr_horizon",
    ("trees", "forest"): "fig2_rf_trees",
    ("trees", "lsboost"): "fig3_lsboost_trees",
    ("memory", "forest"): "fig6_memory",
    ("memory", "lsboost"): "fig6_memory_lsboost",
}


@dataclass(frozen=True)
class FoldAssignment:
    n: int
    k: int
    assignment: np.ndarray
    seed: int
    mode: str

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def kfold_split(n: int, k: int = 5, seed: int = 0, mode: str = "random") -> FoldAssignment:
    """Assign rows ``0..n-1`` to ``k`` folds whose sizes differ by at most one.

    ``random`` chops a seeded permutation; ``blocked`` uses contiguous runs of
    rows, which keeps neighbouring time steps out of each other's folds.
    """
    if k < 2 or n < k:
        raise TooFewRows(f"need n >= k >= 2, got n={n}, k={k}")
    if mode == "random":
        order = np.random.default_rng(seed).permutation(n)
    elif mode == "blocked":
        order = np.arange(n)
    else:
        raise ValueError("mode must be 'random' or 'blocked'")
    assignment = np.empty(n, dtype=np.int64)
    for fold, rows in enumerate(np.array_split(order, k)):
        assignment[rows] = fold
    return FoldAssignment(n, k, assignment, seed, mode)


def cross_val_predict(X, Y, folds: FoldAssignment, fit: Callable) -> np.ndarray:
    """Out-of-fold predictions; the model for fold ``i`` never sees fold ``i``.

    ``fit(X_train, Y_train)`` must return something :func:`predict` accepts.
    """
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.shape[0] != folds.n or Y.shape[0] != folds.n:
        raise LengthMismatch("fold assignment does not match the data")
    out = None
    for fold in range(folds.k):
        train, test = folds.train_rows(fold), folds.test_rows(fold)
        pred = predict(fit(X[train], Y[train]), X[test])
        if out is None:
            out = np.empty((folds.n, pred.shape[1]))
        out[test] = pred
    return out


def _abs_errors(pred_log, actual) -> np.ndarray:
    pred = np.asarray(pred_log, dtype=np.float64).ravel()
    act = np.asarray(actual, dtype=np.float64).ravel()
    if pred.shape != act.shape:
        raise LengthMismatch(f"{pred.size} predictions vs {act.size} actual values")
    if pred.size == 0:
        raise LengthMismatch("no rows to score")
    return np.abs(to_bikes(pred) - act)


def mae_bikes(pred_log, actual):
    """Mean absolute error in bikes.

    Predictions are ``log1p`` values, inverted with clamping at zero.  Given two
    arrays, returns a float.  Given two mappings keyed by station, returns
    ``(per_station, overall)`` where ``overall`` is the unweighted mean.
    """
    if isinstance(pred_log, Mapping):
        if set(pred_log) != set(actual):
            raise LengthMismatch("prediction and actual stations differ")
        per = {s: float(_abs_errors(pred_log[s], actual[s]).mean()) for s in sorted(pred_log)}
        return per, float(np.mean(list(per.values())))
    return float(_abs_errors(pred_log, actual).mean())


def max_ae(pred_log, actual):
    """Largest absolute error in bikes; per station when given mappings."""
    if isinstance(pred_log, Mapping):
        if set(pred_log) != set(actual):
            raise LengthMismatch("prediction and actual stations differ")
        return {s: float(_abs_errors(pred_log[s], actual[s]).max()) for s in sorted(pred_log)}
    return float(_abs_errors(pred_log, actual).max())


@dataclass
class EvalReport:
    learner: str
    horizon: int
    memory: int
    params: dict
    cv_mode: str
    cv_folds: int
    cv_seed: int
    per_station_mae: dict[int, float]
    per_station_maxae: dict[int, float]
    overall_mae: float
    wall_clock_seconds: float = field(default=0.0, compare=False)

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        d["per_station_mae"] = {str(k): v for k, v in self.per_station_mae.items()}
        d["per_station_maxae"] = {str(k): v for k, v in self.per_station_maxae.items()}
        if not timing:
            d.pop("wall_clock_seconds")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["per_station_mae"] = {int(k): v for k, v in d["per_station_mae"].items()}
        d["per_station_maxae"] = {int(k): v for k, v in d["per_station_maxae"].items()}
        return cls(**d)

    def to_frame(self) -> pd.DataFrame:
        stations = sorted(self.per_station_mae)
        return pd.DataFrame(
            {
                "station_id": stations,
                "mae": [self.per_station_mae[s] for s in stations],
                "max_ae": [self.per_station_maxae[s] for s in stations],
            }
        )

    def write(self, directory, name: str) -> tuple[Path, Path]:
        """``<name>.json`` and ``<name>.csv`` (one row per station).  Timing is
        left out so reruns are byte-identical."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        js, csv = directory / f"{name}.json", directory / f"{name}.csv"
        js.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        self.to_frame().to_csv(csv, index=False, lineterminator="\n", float_format="%.10g")
        return js, csv

    @classmethod
    def read_json(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _station_oof(ds: StationDataset, params: HyperParams, folds: FoldAssignment, tree_counts: Sequence[int] | None):
    """Out-of-fold log predictions, one array per tree count (or one for ``None``)."""
    counts = list(tree_counts) if tree_counts else [None]
    fit_params = params.with_(n_trees=max(c for c in counts)) if tree_counts else params
    out = {c: np.empty(ds.n_rows) for c in counts}
    for fold in range(folds.k):
        train, test = folds.train_rows(fold), folds.test_rows(fold)
        model = fit_model(ds.X[train], ds.y[train], fit_params)
        for c in counts:
            m = model if c is None or c == fit_params.n_trees else truncate(model, c)
            out[c][test] = predict(m, ds.X[test])[:, 0]
    return out


def _map(fn, items, jobs: int):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def evaluate_stations(
    datasets: Mapping[int, StationDataset],
    params: HyperParams,
    *,
    folds: int = 5,
    seed: int = 0,
    mode: str = "random",
    jobs: int = 1,
    tree_counts: Sequence[int] | None = None,
):
    """K-fold evaluation of one univariate model per station.

    Returns an :class:`EvalReport`, or with ``tree_counts`` a dict of reports
    keyed by ensemble size (one fit at the largest size, truncated for the
    others; equal to fitting each size on its own under the same seed).
    """
    start = time.perf_counter()
    stations = sorted(datasets)

    def job(s):
        ds = datasets[s]
        f = kfold_split(ds.n_rows, folds, seed, mode)
        return _station_oof(ds, params, f, tree_counts)

    results = dict(zip(stations, _map(job, stations, jobs)))
    elapsed = time.perf_counter() - start
    first = datasets[stations[0]]
    keys = list(tree_counts) if tree_counts else [None]
    reports = {}
    for c in keys:
        preds = {s: results[s][c] for s in stations}
        actual = {s: datasets[s].actual for s in stations}
        per, overall = mae_bikes(preds, actual)
        p = params if c is None else params.with_(n_trees=c)
        reports[c] = EvalReport(
            learner=params.kind,
            horizon=first.horizon,
            memory=first.memory,
            params=p.to_dict(),
            cv_mode=mode,
            cv_folds=folds,
            cv_seed=seed,
            per_station_mae=per,
            per_station_maxae=max_ae(preds, actual),
            overall_mae=overall,
            wall_clock_seconds=elapsed,
        )
    return reports if tree_counts else reports[None]


def evaluate_regions(
    datasets: Mapping[int, RegionDataset],
    params: HyperParams,
    *,
    folds: int = 5,
    seed: int = 0,
    mode: str = "random",
    jobs: int = 1,
) -> EvalReport:
    """K-fold evaluation of one multivariate model per region, scored per member station."""
    start = time.perf_counter()
    regions = sorted(datasets)

    def job(z):
        ds = datasets[z]
        f = kfold_split(ds.n_rows, folds, seed, mode)
        return cross_val_predict(ds.X, ds.Y, f, lambda X, Y: fit_model(X, Y, params))

    oof = dict(zip(regions, _map(job, regions, jobs)))
    preds, actual = {}, {}
    for z in regions:
        for k, s in enumerate(datasets[z].members):
            preds[s] = oof[z][:, k]
            actual[s] = datasets[z].actual[:, k]
    per, overall = mae_bikes(preds, actual)
    return EvalReport(
        learner=params.kind,
        horizon=datasets[regions[0]].horizon,
        memory=0,
        params=params.to_dict(),
        cv_mode=mode,
        cv_folds=folds,
        cv_seed=seed,
        per_station_mae=per,
        per_station_maxae=max_ae(preds, actual),
        overall_mae=overall,
        wall_clock_seconds=time.perf_counter() - start,
    )


@dataclass
class DataBundle:
    """Everything needed to rebuild datasets for any sweep point."""

    grid: SnapshotGrid
    neighbors: Mapping[int, NeighborSet]
    weather: WeatherTable | None
    zips: Mapping[int, str] | None = None
    partition: RegionPartition | None = None
    stations: Sequence[int] | None = None
    min_rows: int = 10


@dataclass
class EvalSettings:
    params: HyperParams = field(default_factory=HyperParams)
    horizon: int = 15
    memory: int = 0
    folds: int = 5
    seed: int = 0
    mode: str = "random"
    jobs: int = 1


def station_datasets(bundle: DataBundle, horizon: int, memory: int = 0) -> dict[int, StationDataset]:
    return build_station_dataset(
        bundle.grid, bundle.neighbors, bundle.weather, horizon, memory, zips=bundle.zips, stations=bundle.stations, min_rows=bundle.min_rows
    )


def region_datasets(bundle: DataBundle, horizon: int) -> dict[int, RegionDataset]:
    if bundle.partition is None:
        raise ValueError("region models need a partition")
    return build_region_dataset(bundle.grid, bundle.partition, bundle.weather, horizon, zips=bundle.zips, min_rows=bundle.min_rows)


def evaluate(bundle: DataBundle, settings: EvalSettings, *, tree_counts: Sequence[int] | None = None):
    """Build datasets for ``settings`` and run the matching evaluation."""
    p = settings.params
    cv = dict(folds=settings.folds, seed=settings.seed, mode=settings.mode, jobs=settings.jobs)
    if p.kind == "plsr":
        if tree_counts:
            raise ValueError("PLSR has no tree count")
        return evaluate_regions(region_datasets(bundle, settings.horizon), p, **cv)
    return evaluate_stations(station_datasets(bundle, settings.horizon, settings.memory), p, tree_counts=tree_counts, **cv)


@dataclass
class SweepResult:
    axis: str
    grid: list[int]
    mae: list[float]
    learner: str
    curves: dict[int, list[float]] | None = None
    reports: list[EvalReport] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "grid": list(self.grid),
            "mae": list(self.mae),
            "learner": self.learner,
            "curves": None if self.curves is None else {str(k): v for k, v in self.curves.items()},
            "reports": [r.to_dict() for r in self.reports],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        curves = None if d.get("curves") is None else {int(k): v for k, v in d["curves"].items()}
        return cls(d["axis"], d["grid"], d["mae"], d["learner"], curves, [EvalReport.from_dict(r) for r in d.get("reports", [])])

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({self.axis: self.grid, "mae": self.mae})
        for n, values in (self.curves or {}).items():
            frame[f"mae_trees_{n}"] = values
        return frame

    def write(self, directory, name: str | None = None) -> tuple[Path, Path]:
        name = name or FIGURE_NAMES.get((self.axis, self.learner), f"sweep_{self.axis}_{self.learner}")
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        js, csv = directory / f"{name}.json", directory / f"{name}.csv"
        js.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        self.to_frame().to_csv(csv, index=False, lineterminator="\n", float_format="%.10g")
        return js, csv

    @classmethod
    def read_json(cls, path) -> "SweepResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


def run_sweep(
    axis: str,
    grid: Sequence[int],
    settings: EvalSettings,
    bundle: DataBundle,
    *,
    tree_curves: Sequence[int] | None = None,
) -> SweepResult:
    """Evaluate once per grid value of ``axis`` with every other setting fixed.

    ``tree_curves`` (horizon axis, tree learners) adds one MAE curve per
    ensemble size, as in a horizon x trees grid.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    grid = [int(g) for g in grid]
    if not grid:
        raise ValueError("empty sweep grid")
    p = settings.params
    reports: list[EvalReport] = []
    curves = None
    if axis == "trees":
        if p.kind not in ("forest", "lsboost"):
            raise ValueError("tree sweep needs a forest or boosting learner")
        by_count = evaluate(bundle, settings, tree_counts=grid)
        reports = [by_count[g] for g in grid]
    elif axis == "horizon":
        if tree_curves:
            curves = {int(n): [] for n in tree_curves}
        for h in grid:
            s = EvalSettings(**{**asdict_shallow(settings), "horizon": h})
            if curves is not None:
                counts = sorted(set(curves) | {p.n_trees})
                by_count = evaluate(bundle, s, tree_counts=counts)
                for n in curves:
                    curves[n].append(by_count[n].overall_mae)
                reports.append(by_count[p.n_trees])
            else:
                reports.append(evaluate(bundle, s))
            logger.info("horizon %d: MAE %.4f", h, reports[-1].overall_mae)
    else:
        if p.kind == "plsr":
            raise ValueError("memory sweep applies to station models")
        for m in grid:
            s = EvalSettings(**{**asdict_shallow(settings), "memory": m})
            reports.append(evaluate(bundle, s))
            logger.info("memory %d: MAE %.4f", m, reports[-1].overall_mae)
    return SweepResult(axis, grid, [r.overall_mae for r in reports], p.kind, curves, reports)


def asdict_shallow(settings: EvalSettings) -> dict:
    return {f: getattr(settings, f) for f in settings.__dataclass_fields__}


def comparison_frame(results: Mapping[str, SweepResult]) -> pd.DataFrame:
    """Side-by-side MAE of several learners over a shared horizon grid."""
    frame = None
    for name, res in results.items():
        part = pd.DataFrame({res.axis: res.grid, f"mae_{name}": res.mae})
        frame = part if frame is None else frame.merge(part, on=res.axis, how="outer")
    return frame
