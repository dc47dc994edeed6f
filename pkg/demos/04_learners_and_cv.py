"""Fit the three learners on one station and cross-validate all busy stations."""
import tempfile
import time

import numpy as np

from bikecast import (DataBundle, EvalSettings, HyperParams, WeatherTable, build_adjacency, clean_stations,
                      evaluate, feature_importance, fit_model, neighbor_sets, parse_stations, parse_status,
                      parse_trips, parse_weather, partition_regions, predict, resample_grid, station_zips)
from bikecast.evaluate import station_datasets
from bikecast.network import busiest_stations
from bikecast.synthetic import simulate_system

DATA = tempfile.mkdtemp(prefix="bikecast-demo-")
simulate_system(start="2014-03-03", days=28, seed=4).write(DATA)

grid, _ = clean_stations(resample_grid(parse_status(f"{DATA}/status.csv")))
adj = build_adjacency(parse_trips(f"{DATA}/trip.csv"), grid.stations)
bundle = DataBundle(
    grid,
    neighbor_sets(adj, 10),
    WeatherTable.from_records(parse_weather(f"{DATA}/weather.csv")),
    station_zips(parse_stations(f"{DATA}/station.csv")),
    partition_regions(adj, 20),
    busiest_stations(adj, 5),
)

# train on the first two weeks of one station, test on the last two
ds = next(iter(station_datasets(bundle, 15).values()))
half = ds.n_rows // 2
print(f"station {ds.station_id}: persistence MAE {np.abs(ds.X[half:, 0] - ds.actual[half:]).mean():.3f} bikes")
for kind in ("forest", "lsboost"):
    model = fit_model(ds.X[:half], ds.y[:half], HyperParams(kind=kind, n_trees=60))
    err = np.abs(np.clip(np.expm1(predict(model, ds.X[half:])[:, 0]), 0, None) - ds.actual[half:]).mean()
    top = sorted(feature_importance(model, ds.feature_names).items(), key=lambda kv: -kv[1])[:3]
    print(f"{kind:>8}: held-out MAE {err:.3f} bikes; top features {[name for name, _ in top]}")

# five-fold CV with random folds; neighbouring ticks land in different folds, so
# these numbers run lower than the chronological split above.
# PLSR is fit per region on all member stations at once
for kind in ("forest", "lsboost", "plsr"):
    t = time.perf_counter()
    rep = evaluate(bundle, EvalSettings(params=HyperParams(kind=kind, n_trees=60)))
    print(f"{kind:>8}: CV MAE {rep.overall_mae:.3f} over {len(rep.per_station_mae)} stations ({time.perf_counter() - t:.1f} s)")
