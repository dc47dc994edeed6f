"""Supervised design matrices for station-level and region-level models.

Targets are ``log1p`` of the bike count ``horizon`` minutes ahead; predictions
go back to bikes with :func:`to_bikes`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DataError, EmptyRegion, HorizonNotMultiple, InsufficientData, NoWeatherHistory
from .ingest import ParseResult, SnapshotGrid
from .network import NeighborSet, RegionPartition

MAX_MEMORY = 7
INDEX_FILE = "datasets.json"
WEATHER_FIELDS = ("temperature", "visibility", "humidity", "wind_speed", "precipitation", "rain", "fog", "sun")
CALENDAR_FIELDS = ("month", "day_of_week", "time_of_day")
DEFAULT_CITY_ZIP = {
    "San Francisco": "94107",
    "Redwood City": "94063",
    "Palo Alto": "94301",
    "Mountain View": "94041",
    "San Jose": "95113",
}


@dataclass(frozen=True)
class CalendarFeatures:
    month: int
    day_of_week: int  # Monday = 1
    time_of_day: int  # minutes since midnight


def encode_calendar(timestamp) -> CalendarFeatures:
    ts = pd.Timestamp(timestamp)
    return CalendarFeatures(ts.month, ts.dayofweek + 1, ts.hour * 60 + ts.minute)


def calendar_block(ticks) -> np.ndarray:
    """Calendar features for many ticks at once, columns as ``CALENDAR_FIELDS``."""
    idx = pd.DatetimeIndex(np.asarray(ticks).astype("datetime64[s]"))
    return np.column_stack([idx.month, idx.dayofweek + 1, idx.hour * 60 + idx.minute]).astype(np.float64)


def one_hot_calendar(ticks) -> tuple[np.ndarray, list[str]]:
    cal = calendar_block(ticks)
    month = cal[:, 0].astype(int)
    dow = cal[:, 1].astype(int)
    blocks = [(month[:, None] == np.arange(1, 13)).astype(float), (dow[:, None] == np.arange(1, 8)).astype(float), cal[:, 2:3]]
    names = [f"month_{m}" for m in range(1, 13)] + [f"dow_{d}" for d in range(1, 8)] + ["time_of_day"]
    return np.hstack(blocks), names


class WeatherTable:
    """Daily weather by (date, zip) with carry-forward for missing days."""

    def __init__(self, frame: pd.DataFrame):
        frame = frame.drop_duplicates(subset=["date", "zip"], keep="first")
        self._days: dict[str, np.ndarray] = {}
        self._values: dict[str, np.ndarray] = {}
        for zip_code, part in frame.groupby("zip", sort=True):
            part = part.sort_values("date", kind="stable")
            self._days[str(zip_code)] = part["date"].to_numpy().astype("datetime64[D]")
            self._values[str(zip_code)] = np.column_stack(
                [
                    part["temperature"],
                    part["visibility"],
                    part["humidity"],
                    part["wind_speed"],
                    part["precipitation"],
                    part["rain_flag"],
                    part["fog_flag"],
                    part["sun_flag"],
                ]
            ).astype(np.float64)

    @classmethod
    def from_records(cls, records) -> "WeatherTable":
        if isinstance(records, ParseResult):
            return cls(records.frame)
        if isinstance(records, pd.DataFrame):
            return cls(records)
        rows = [
            {
                "date": np.datetime64(r.date, "D"),
                "zip": r.zip,
                "temperature": r.temperature,
                "visibility": r.visibility,
                "humidity": r.humidity,
                "wind_speed": r.wind_speed,
                "precipitation": r.precipitation,
                "rain_flag": r.rain_flag,
                "fog_flag": r.fog_flag,
                "sun_flag": r.sun_flag,
            }
            for r in records
        ]
        return cls(pd.DataFrame(rows))

    @property
    def zips(self) -> list[str]:
        return list(self._days)

    def block(self, days, zip_code: str) -> np.ndarray:
        """Weather rows for each day in ``days``; a day without a record takes
        the most recent earlier day for the same zip."""
        days = np.asarray(days).astype("datetime64[D]")
        if zip_code not in self._days:
            raise NoWeatherHistory(f"no weather recorded for zip {zip_code}")
        known = self._days[zip_code]
        pos = np.searchsorted(known, days, side="right") - 1
        if np.any(pos < 0):
            first = days[pos < 0].min()
            raise NoWeatherHistory(f"no weather for zip {zip_code} on or before {first}")
        return self._values[zip_code][pos]


def join_weather(tick, zip_code: str, weather: WeatherTable) -> np.ndarray:
    """Weather fields (ordered as ``WEATHER_FIELDS``) for one tick and zip."""
    return weather.block(np.array([np.datetime64(pd.Timestamp(tick).to_datetime64(), "D")]), zip_code)[0]


def station_zips(stations, city_zip: Mapping[str, str] = DEFAULT_CITY_ZIP) -> dict[int, str]:
    """Weather zip for each station, looked up from its city."""
    frame = stations.frame if isinstance(stations, ParseResult) else stations
    out = {}
    for sid, city in zip(frame["station_id"], frame["city"]):
        if city not in city_zip:
            raise DataError(f"station {sid}: no weather zip configured for city {city!r}")
        out[int(sid)] = city_zip[city]
    return out


def horizon_steps(horizon: int, spacing: int) -> int:
    if horizon <= 0 or (horizon * 60) % spacing:
        raise HorizonNotMultiple(f"horizon {horizon} min is not a positive multiple of {spacing} s")
    return horizon * 60 // spacing


def to_bikes(log_counts) -> np.ndarray:
    """Invert ``log1p`` targets to bike counts, clamping negatives to zero."""
    return np.maximum(np.expm1(np.asarray(log_counts, dtype=np.float64)), 0.0)


@dataclass(frozen=True)
class StationDataset:
    station_id: int
    feature_names: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    horizon: int
    memory: int
    neighbors: tuple[int, ...]
    ticks: np.ndarray
    target_ticks: np.ndarray
    actual: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.y.size

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.X, columns=list(self.feature_names))
        frame.insert(0, "tick", self.ticks)
        frame["target"] = self.y
        frame["actual"] = self.actual
        return frame

    def write_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, date_format="%Y-%m-%d %H:%M:%S", lineterminator="\n")

    @classmethod
    def read_csv(cls, path, station_id: int, horizon: int, memory: int, neighbors: Sequence[int]) -> "StationDataset":
        frame = pd.read_csv(path, parse_dates=["tick"], float_precision="round_trip")
        names = tuple(c for c in frame.columns if c not in ("tick", "target", "actual"))
        ticks = frame["tick"].to_numpy().astype("datetime64[s]")
        return cls(
            station_id,
            names,
            frame[list(names)].to_numpy(dtype=np.float64),
            frame["target"].to_numpy(dtype=np.float64),
            horizon,
            memory,
            tuple(neighbors),
            ticks,
            ticks + np.timedelta64(horizon * 60, "s"),
            frame["actual"].to_numpy(dtype=np.int64),
        )


@dataclass(frozen=True)
class RegionDataset:
    region: int
    members: tuple[int, ...]
    feature_names: tuple[str, ...]
    X: np.ndarray
    Y: np.ndarray
    horizon: int
    ticks: np.ndarray
    target_ticks: np.ndarray
    actual: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.Y.shape[0]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.X, columns=list(self.feature_names))
        frame.insert(0, "tick", self.ticks)
        for k, s in enumerate(self.members):
            frame[f"target_{s}"] = self.Y[:, k]
        for k, s in enumerate(self.members):
            frame[f"actual_{s}"] = self.actual[:, k]
        return frame

    def write_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, date_format="%Y-%m-%d %H:%M:%S", lineterminator="\n")

    @classmethod
    def read_csv(cls, path, region: int, members: Sequence[int], horizon: int) -> "RegionDataset":
        frame = pd.read_csv(path, parse_dates=["tick"], float_precision="round_trip")
        targets = [f"target_{s}" for s in members]
        actuals = [f"actual_{s}" for s in members]
        names = tuple(c for c in frame.columns if c != "tick" and c not in targets and c not in actuals)
        ticks = frame["tick"].to_numpy().astype("datetime64[s]")
        return cls(
            region,
            tuple(int(s) for s in members),
            names,
            frame[list(names)].to_numpy(dtype=np.float64),
            frame[targets].to_numpy(dtype=np.float64),
            horizon,
            ticks,
            ticks + np.timedelta64(horizon * 60, "s"),
            frame[actuals].to_numpy(dtype=np.int64),
        )


def _weather_rows(ticks: np.ndarray, zip_code: str | None, weather: WeatherTable | None) -> np.ndarray:
    if weather is None:
        return np.empty((ticks.size, 0))
    if zip_code is None:
        raise KeyError("weather requested but the station has no zip")
    return weather.block(ticks.astype("datetime64[D]"), zip_code)


def build_station_dataset(
    grid: SnapshotGrid,
    neighbors: Mapping[int, NeighborSet],
    weather: WeatherTable | None,
    horizon: int,
    memory: int = 0,
    *,
    zips: Mapping[int, str] | None = None,
    stations: Sequence[int] | None = None,
    min_rows: int = 10,
) -> dict[int, StationDataset]:
    """One supervised dataset per station.

    A row exists for tick ``t`` when the station's counts at ``t - memory ... t``
    and ``t + horizon``, and every neighbour's count at ``t``, are all present.
    Columns: own count, neighbour counts (in ``NeighborSet`` order), counts at
    ``t-1 ... t-memory``, calendar, weather.
    """
    steps = horizon_steps(horizon, grid.spacing)
    if not 0 <= memory <= MAX_MEMORY:
        raise ValueError(f"memory must be within 0..{MAX_MEMORY}")
    targets = grid.stations if stations is None else np.asarray(stations, dtype=np.int64)
    present = ~grid.missing
    n = grid.n_ticks
    t = np.arange(memory, max(n - steps, memory))
    calendar = calendar_block(grid.ticks)
    out: dict[int, StationDataset] = {}
    for s in targets:
        s = int(s)
        row = grid.index_of(s)
        nbrs = neighbors[s].neighbors if s in neighbors else ()
        nrows = [grid.index_of(j) for j in nbrs]
        ok = present[row, t + steps].copy()
        for lag in range(memory + 1):
            ok &= present[row, t - lag]
        for j in nrows:
            ok &= present[j, t]
        tt = t[ok]
        if tt.size < min_rows:
            raise InsufficientData(f"station {s}: {tt.size} rows < {min_rows}")
        cols = [grid.counts[row, tt][:, None]]
        cols += [grid.counts[j, tt][:, None] for j in nrows]
        cols += [grid.counts[row, tt - lag][:, None] for lag in range(1, memory + 1)]
        cols += [calendar[tt], _weather_rows(grid.ticks[tt], None if zips is None else zips.get(s), weather)]
        names = (
            ["own_count"]
            + [f"neighbor_{k + 1}" for k in range(len(nrows))]
            + [f"lag_{lag}" for lag in range(1, memory + 1)]
            + list(CALENDAR_FIELDS)
            + (list(WEATHER_FIELDS) if weather is not None else [])
        )
        actual = grid.counts[row, tt + steps].astype(np.int64)
        out[s] = StationDataset(
            s,
            tuple(names),
            np.hstack(cols).astype(np.float64),
            np.log1p(actual.astype(np.float64)),
            horizon,
            memory,
            tuple(int(j) for j in nbrs),
            grid.ticks[tt],
            grid.ticks[tt + steps],
            actual,
        )
    return out


def region_zip(members: Sequence[int], zips: Mapping[int, str] | None) -> str | None:
    """Most common zip among ``members`` (smallest on ties)."""
    if zips is None:
        return None
    values = [zips[m] for m in members if m in zips]
    if not values:
        return None
    uniq, counts = np.unique(values, return_counts=True)
    return str(uniq[np.argmax(counts)])


def build_region_dataset(
    grid: SnapshotGrid,
    partition: RegionPartition,
    weather: WeatherTable | None,
    horizon: int,
    *,
    zips: Mapping[int, str] | None = None,
    one_hot: bool = True,
    min_rows: int = 10,
) -> dict[int, RegionDataset]:
    """One multivariate dataset per region.

    Predictors are every member's count at ``t`` plus calendar (one-hot month and
    weekday when ``one_hot``) and the weather of the region's zip; responses are
    ``log1p`` member counts at ``t + horizon``.
    """
    steps = horizon_steps(horizon, grid.spacing)
    uncovered = [int(s) for s in grid.stations if int(s) not in partition.assignment]
    if uncovered:
        raise ValueError(f"partition does not cover stations {uncovered}")
    present = ~grid.missing
    t = np.arange(0, max(grid.n_ticks - steps, 0))
    if one_hot:
        calendar, cal_names = one_hot_calendar(grid.ticks)
    else:
        calendar, cal_names = calendar_block(grid.ticks), list(CALENDAR_FIELDS)
    in_grid = set(int(s) for s in grid.stations)
    out: dict[int, RegionDataset] = {}
    for z in range(1, partition.n_regions + 1):
        members = [s for s in partition.members(z) if s in in_grid]
        if not members:
            raise EmptyRegion(f"region {z} has no stations in the grid")
        rows = [grid.index_of(s) for s in members]
        ok = present[np.ix_(rows, t)].all(axis=0) & present[np.ix_(rows, t + steps)].all(axis=0)
        tt = t[ok]
        if tt.size < min_rows:
            raise InsufficientData(f"region {z}: {tt.size} rows < {min_rows}")
        counts_t = grid.counts[np.ix_(rows, tt)].T.astype(np.float64)
        actual = grid.counts[np.ix_(rows, tt + steps)].T.astype(np.int64)
        wx = _weather_rows(grid.ticks[tt], region_zip(members, zips), weather)
        names = [f"count_{s}" for s in members] + cal_names + (list(WEATHER_FIELDS) if weather is not None else [])
        out[z] = RegionDataset(
            z,
            tuple(members),
            tuple(names),
            np.hstack([counts_t, calendar[tt], wx]),
            np.log1p(actual.astype(np.float64)),
            horizon,
            grid.ticks[tt],
            grid.ticks[tt + steps],
            actual,
        )
    return out


def write_station_datasets(datasets: Mapping[int, StationDataset], directory) -> Path:
    """Write one CSV per station plus a ``datasets.json`` index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in sorted(datasets):
        ds = datasets[s]
        name = f"station_{s}.csv"
        ds.write_csv(directory / name)
        entries.append({"station_id": s, "file": name, "rows": ds.n_rows, "neighbors": list(ds.neighbors), "columns": list(ds.feature_names)})
    first = datasets[min(datasets)]
    manifest = {"horizon": first.horizon, "memory": first.memory, "stations": entries}
    path = directory / INDEX_FILE
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def read_station_datasets(directory) -> dict[int, StationDataset]:
    directory = Path(directory)
    manifest = json.loads((directory / INDEX_FILE).read_text())
    out = {}
    for e in manifest["stations"]:
        out[e["station_id"]] = StationDataset.read_csv(
            directory / e["file"], e["station_id"], manifest["horizon"], manifest["memory"], e["neighbors"]
        )
    return out


def write_region_datasets(datasets: Mapping[int, RegionDataset], directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for z in sorted(datasets):
        ds = datasets[z]
        name = f"region_{z}.csv"
        ds.write_csv(directory / name)
        entries.append({"region": z, "file": name, "rows": ds.n_rows, "members": list(ds.members)})
    manifest = {"horizon": datasets[min(datasets)].horizon, "regions": entries}
    path = directory / INDEX_FILE
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def read_region_datasets(directory) -> dict[int, RegionDataset]:
    directory = Path(directory)
    manifest = json.loads((directory / INDEX_FILE).read_text())
    return {
        e["region"]: RegionDataset.read_csv(directory / e["file"], e["region"], e["members"], manifest["horizon"])
        for e in manifest["regions"]
    }
