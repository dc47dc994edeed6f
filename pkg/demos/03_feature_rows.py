"""Build the supervised rows for one station and look at what goes into them."""
import tempfile

import numpy as np

from bikecast import (WeatherTable, build_adjacency, build_station_dataset, clean_stations, neighbor_sets,
                      parse_stations, parse_status, parse_trips, parse_weather, resample_grid, station_zips)
from bikecast.synthetic import simulate_system

DATA = tempfile.mkdtemp(prefix="bikecast-demo-")
simulate_system(start="2014-03-03", days=14, seed=3).write(DATA)

grid, _ = clean_stations(resample_grid(parse_status(f"{DATA}/status.csv")))
adj = build_adjacency(parse_trips(f"{DATA}/trip.csv"), grid.stations)
weather = WeatherTable.from_records(parse_weather(f"{DATA}/weather.csv"))
zips = station_zips(parse_stations(f"{DATA}/station.csv"))
sid = int(grid.stations[0])

for horizon, memory in ((15, 0), (60, 0), (15, 3)):
    ds = build_station_dataset(grid, neighbor_sets(adj, 10), weather, horizon, memory, zips=zips, stations=[sid])[sid]
    print(f"horizon {horizon:>3} min, memory {memory}: {ds.n_rows} rows x {ds.X.shape[1]} columns")

print("columns:", ", ".join(ds.feature_names))

# the target is log(1 + bikes) at t + horizon; undoing the transform recovers the counts up to rounding
back = np.expm1(ds.y)
print("max |expm1(y) - bikes|:", float(np.abs(back - ds.actual).max()))
print("first row ticks:", ds.ticks[0], "->", ds.target_ticks[0])
