"""Bike availability forecasting for docked bike-share networks.

Status snapshots are resampled onto a 15-minute grid, trip records give each
station its busiest in-degree neighbours and split the network into regions,
and per-station tree ensembles or per-region PLSR models forecast counts a
fixed horizon ahead.
"""
__version__ = "0.1.0"

from .errors import BikecastError, DataError, UserError
from .evaluate import EvalReport, EvalSettings, DataBundle, SweepResult, evaluate, kfold_split, mae_bikes, max_ae, run_sweep
from .features import WeatherTable, build_region_dataset, build_station_dataset, station_zips
from .ingest import SnapshotGrid, clean_stations, parse_stations, parse_status, parse_trips, parse_weather, resample_grid
from .learners import HyperParams, feature_importance, fit_model, predict
from .network import build_adjacency, neighbor_sets, partition_regions, top_k_neighbors

__all__ = [
    "BikecastError",
    "DataBundle",
    "DataError",
    "EvalReport",
    "EvalSettings",
    "HyperParams",
    "SnapshotGrid",
    "SweepResult",
    "UserError",
    "WeatherTable",
    "build_adjacency",
    "build_region_dataset",
    "build_station_dataset",
    "clean_stations",
    "evaluate",
    "feature_importance",
    "fit_model",
    "kfold_split",
    "mae_bikes",
    "max_ae",
    "neighbor_sets",
    "parse_stations",
    "parse_status",
    "parse_trips",
    "parse_weather",
    "partition_regions",
    "predict",
    "resample_grid",
    "run_sweep",
    "station_zips",
    "top_k_neighbors",
]
