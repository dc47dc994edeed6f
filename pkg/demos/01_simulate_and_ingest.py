"""Write a small synthetic bike-share system to disk, then read it back.

The public station/status/trip/weather files have the same layout, so point
DATA at a directory holding them to run this on real data instead.
"""
import os
import sys
import tempfile

from bikecast import clean_stations, parse_stations, parse_status, parse_weather, resample_grid
from bikecast.synthetic import simulate_system

DATA = sys.argv[1] if len(sys.argv) > 1 else os.environ.get("BIKECAST_DATA_DIR")

if DATA is None:
    DATA = tempfile.mkdtemp(prefix="bikecast-demo-")
    simulate_system(start="2014-03-03", days=21, seed=5).write(DATA)
    print("simulated three weeks into", DATA)

stations = parse_stations(f"{DATA}/station.csv")
print(f"{len(stations)} stations, cities: {sorted(stations.frame['city'].unique())}")

# status snapshots arrive every few minutes; the grid keeps one count per 15-minute tick
status = parse_status(f"{DATA}/status.csv", on_error="collect")
print(f"status rows: {status.n_rows} read, {len(status.errors)} rejected")
grid = resample_grid(status)
print(f"raw grid: {grid.n_stations} stations x {grid.n_ticks} ticks")

cleaned, log = clean_stations(grid)
print(f"cleaned:  {log.stations_before} -> {log.stations_after} stations, "
      f"{log.complete_ticks_before} -> {log.complete_ticks_after} fully observed ticks")
for entry in log.dropped:
    print("  dropped", entry)

weather = parse_weather(f"{DATA}/weather.csv")
print(f"weather: {len(weather)} daily rows for zips {sorted(weather.frame['zip'].unique())}")
