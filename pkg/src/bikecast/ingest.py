"""Reading the public bike-share files and putting station status on a 15-minute grid.

The four inputs (status, trip, weather, station) are delimited text tables with
a header row.  Every parser returns a :class:`ParseResult` holding a typed
``pandas.DataFrame`` plus the located errors for rows that could not be read.
Status files run to tens of millions of rows, so records are kept columnar and
only materialised as dataclasses on request (``ParseResult.records()``).
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    AllStationsDropped,
    DuplicateStation,
    EmptyInput,
    MalformedRow,
    MissingColumn,
)

logger = logging.getLogger(__name__)

TICK_SECONDS = 900
MAX_GAP_SECONDS = 3600
MISSING = -1
CHUNK_ROWS = 1_000_000  # rows per read; keeps string buffers small on the status file

# field name -> header name in the public dataset
STATUS_COLUMNS = {
    "station_id": "station_id",
    "bikes_available": "bikes_available",
    "docks_available": "docks_available",
    "timestamp": "time",
}
TRIP_COLUMNS = {
    "start_station": "start_station_id",
    "end_station": "end_station_id",
    "start_time": "start_date",
    "end_time": "end_date",
    "duration": "duration",
}
WEATHER_COLUMNS = {
    "date": "date",
    "zip": "zip_code",
    "temperature": "mean_temperature_f",
    "visibility": "mean_visibility_miles",
    "humidity": "mean_humidity",
    "wind_speed": "mean_wind_speed_mph",
    "precipitation": "precipitation_inches",
    "events": "events",
}
STATION_COLUMNS = {
    "station_id": "id",
    "name": "name",
    "latitude": "lat",
    "longitude": "long",
    "dock_count": "dock_count",
    "city": "city",
    "installation_date": "installation_date",
}

STATUS_TIME_FORMATS = ("%Y/%m/%d %H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y/%m/%d %H:%M", "%Y-%m-%d %H:%M")
TRIP_TIME_FORMATS = ("%m/%d/%Y %H:%M", "%m/%d/%Y %H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M")
DATE_FORMATS = ("%m/%d/%Y", "%Y-%m-%d", "%Y/%m/%d")


@dataclass(frozen=True)
class StatusRecord:
    station_id: int
    timestamp: datetime
    bikes_available: int
    docks_available: int


@dataclass(frozen=True)
class TripRecord:
    start_station: int
    end_station: int
    start_time: datetime
    end_time: datetime
    duration: float
    unknown_station: bool = False


@dataclass(frozen=True)
class WeatherRecord:
    date: date
    zip: str
    temperature: float
    visibility: float
    humidity: float
    wind_speed: float
    precipitation: float
    rain_flag: bool
    fog_flag: bool
    sun_flag: bool


@dataclass(frozen=True)
class StationMeta:
    station_id: int
    name: str
    latitude: float
    longitude: float
    dock_count: int
    city: str
    installation_date: date


@dataclass
class ParseResult:
    """Typed rows of one input file plus the rows that failed.

    ``n_rows == len(frame) + len(errors)`` always holds.  ``frame`` keeps the
    original 0-based data-row index in its ``row`` column.
    """

    frame: pd.DataFrame
    errors: list[MalformedRow]
    n_rows: int
    record_type: type

    def __len__(self) -> int:
        return len(self.frame)

    def records(self) -> Iterator:
        names = [f for f in self.record_type.__dataclass_fields__]
        for values in self.frame[names].itertuples(index=False, name=None):
            yield self.record_type(*(_python_scalar(v) for v in values))


def _python_scalar(v):
    if isinstance(v, pd.Timestamp):
        return v.to_pydatetime()
    if isinstance(v, np.generic):
        return v.item()
    return v


class _RowChecker:
    """Collects per-row conversion failures; keeps only the first per row.

    ``offset`` is the file row number of the chunk's first row.
    """

    def __init__(self, frame: pd.DataFrame, offset: int = 0):
        self.frame = frame
        self.offset = offset
        self.bad = np.zeros(len(frame), dtype=bool)
        self.errors: dict[int, MalformedRow] = {}

    def flag(self, mask, column: str, reason: str) -> None:
        mask = np.asarray(mask, dtype=bool)
        idx = np.flatnonzero(mask & ~self.bad)
        if idx.size == 0:
            return
        raw = self.frame[column].to_numpy()
        for i in idx:
            row = self.offset + int(i)
            self.errors[row] = MalformedRow(row, column, raw[i], reason)
        self.bad[idx] = True


def _read_chunks(source, columns: Mapping[str, str], delimiter: str, chunksize: int) -> Iterator[pd.DataFrame]:
    """Raw string chunks of a table; a header-only file yields one empty chunk."""
    if isinstance(source, (str, Path)):
        source = Path(source)
    reader = pd.read_csv(
        source,
        sep=delimiter,
        dtype=str,
        keep_default_na=False,
        skipinitialspace=True,
        encoding_errors="replace",
        chunksize=chunksize,
    )
    with reader:
        for i, raw in enumerate(reader):
            raw.columns = [c.strip() for c in raw.columns]
            if i == 0:
                for header in columns.values():
                    if header not in raw.columns:
                        raise MissingColumn(header, raw.columns)
            yield raw


def _parse(source, cols, delimiter: str, on_error: str, record_type: type, build, chunksize: int) -> ParseResult:
    """Run ``build(raw_chunk, checker) -> typed frame`` over the file chunk by chunk."""
    if on_error not in ("raise", "collect"):
        raise ValueError("on_error must be 'raise' or 'collect'")
    frames, errors, n = [], [], 0
    for raw in _read_chunks(source, cols, delimiter, chunksize):
        check = _RowChecker(raw, n)
        frame = build(raw, check)
        frame["row"] = np.arange(n, n + len(raw))
        if check.errors and on_error == "raise":
            raise check.errors[min(check.errors)]
        errors += [check.errors[i] for i in sorted(check.errors)]
        frames.append(frame.loc[~check.bad])
        n += len(raw)
    good = pd.concat(frames, ignore_index=True) if len(frames) > 1 else frames[0].reset_index(drop=True)
    return ParseResult(good, errors, n, record_type)


def _mapping(defaults: Mapping[str, str], override: Mapping[str, str] | None) -> dict[str, str]:
    merged = dict(defaults)
    if override:
        unknown = set(override) - set(defaults)
        if unknown:
            raise KeyError(f"unknown column fields {sorted(unknown)}")
        merged.update(override)
    return merged


def _as_int(raw: pd.Series) -> tuple[np.ndarray, np.ndarray]:
    num = pd.to_numeric(raw.str.strip(), errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(num)
    bad |= np.where(bad, False, num != np.round(num))
    out = np.where(bad, 0, num).astype(np.int64)
    return out, bad


def _as_float(raw: pd.Series, trace: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    text = raw.str.strip()
    if trace is not None:
        # "T" marks a trace amount of precipitation
        text = text.mask(text.str.upper() == trace, "0")
    bad = ~np.isfinite(pd.to_numeric(text, errors="coerce").to_numpy(dtype=float))
    # to_numeric can be off by an ulp; astype(float) rounds correctly
    num = np.zeros(len(text))
    num[~bad] = text[~bad].astype(float).to_numpy()
    return num, bad


def _as_datetime(raw: pd.Series, formats: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    text = raw.str.strip()
    out = pd.Series(pd.NaT, index=raw.index, dtype="datetime64[ns]")
    todo = np.ones(len(raw), dtype=bool)
    for fmt in formats:
        if not todo.any():
            break
        parsed = pd.to_datetime(text[todo], format=fmt, errors="coerce")
        out[todo] = parsed
        todo = out.isna().to_numpy()
    bad = out.isna().to_numpy()
    return out.to_numpy().astype("datetime64[s]"), bad


def parse_status(
    source,
    columns: Mapping[str, str] | None = None,
    *,
    delimiter: str = ",",
    time_formats: Sequence[str] = STATUS_TIME_FORMATS,
    on_error: str = "raise",
    chunksize: int = CHUNK_ROWS,
) -> ParseResult:
    """Parse a station status table into ``StatusRecord`` rows.

    Timestamps are truncated to the minute.  With ``on_error="collect"`` bad rows
    are skipped and reported in ``ParseResult.errors``; the default raises the
    first :class:`MalformedRow`.  The file is read ``chunksize`` rows at a time.
    """
    cols = _mapping(STATUS_COLUMNS, columns)

    def build(raw, check):
        sid, bad = _as_int(raw[cols["station_id"]])
        check.flag(bad, cols["station_id"], "not an integer")
        bikes, bad = _as_int(raw[cols["bikes_available"]])
        check.flag(bad, cols["bikes_available"], "not an integer")
        check.flag(bikes < 0, cols["bikes_available"], "negative count")
        docks, bad = _as_int(raw[cols["docks_available"]])
        check.flag(bad, cols["docks_available"], "not an integer")
        check.flag(docks < 0, cols["docks_available"], "negative count")
        ts, bad = _as_datetime(raw[cols["timestamp"]], time_formats)
        check.flag(bad, cols["timestamp"], "unparseable datetime")
        return pd.DataFrame(
            {
                "station_id": sid,
                "timestamp": ts.astype("datetime64[m]").astype("datetime64[s]"),
                "bikes_available": bikes,
                "docks_available": docks,
            }
        )

    result = _parse(source, cols, delimiter, on_error, StatusRecord, build, chunksize)
    logger.info("status: %d rows, %d records, %d errors", result.n_rows, len(result), len(result.errors))
    return result


def parse_trips(
    source,
    columns: Mapping[str, str] | None = None,
    *,
    known_stations: Iterable[int] | None = None,
    delimiter: str = ",",
    time_formats: Sequence[str] = TRIP_TIME_FORMATS,
    on_error: str = "raise",
    chunksize: int = CHUNK_ROWS,
) -> ParseResult:
    """Parse a trip table.  Trips touching a station outside ``known_stations``
    are kept and marked in the ``unknown_station`` column."""
    cols = _mapping(TRIP_COLUMNS, columns)
    known = None if known_stations is None else np.fromiter(known_stations, dtype=np.int64)

    def build(raw, check):
        start, bad = _as_int(raw[cols["start_station"]])
        check.flag(bad, cols["start_station"], "not an integer")
        end, bad = _as_int(raw[cols["end_station"]])
        check.flag(bad, cols["end_station"], "not an integer")
        t0, bad = _as_datetime(raw[cols["start_time"]], time_formats)
        check.flag(bad, cols["start_time"], "unparseable datetime")
        t1, bad = _as_datetime(raw[cols["end_time"]], time_formats)
        check.flag(bad, cols["end_time"], "unparseable datetime")
        check.flag((t1 < t0) & ~np.isnat(t0) & ~np.isnat(t1), cols["end_time"], "ends before it starts")
        dur, bad = _as_float(raw[cols["duration"]])
        check.flag(bad, cols["duration"], "not a number")
        check.flag(dur < 0, cols["duration"], "negative duration")
        if known is None:
            unknown = np.zeros(len(raw), dtype=bool)
        else:
            unknown = ~(np.isin(start, known) & np.isin(end, known))
        return pd.DataFrame(
            {
                "start_station": start,
                "end_station": end,
                "start_time": t0,
                "end_time": t1,
                "duration": dur,
                "unknown_station": unknown,
            }
        )

    return _parse(source, cols, delimiter, on_error, TripRecord, build, chunksize)


def event_flags(events: str) -> tuple[bool, bool, bool]:
    """Map a weather ``events`` string to (rain, fog, sun) flags.

    Substring match, case-insensitive; a blank field means a clear day.
    """
    text = (events or "").strip().lower()
    if not text:
        return False, False, True
    return "rain" in text, "fog" in text, False


def parse_weather(
    source,
    columns: Mapping[str, str] | None = None,
    *,
    delimiter: str = ",",
    date_formats: Sequence[str] = DATE_FORMATS,
    on_error: str = "raise",
    chunksize: int = CHUNK_ROWS,
) -> ParseResult:
    cols = _mapping(WEATHER_COLUMNS, columns)

    def build(raw, check):
        day, bad = _as_datetime(raw[cols["date"]], date_formats)
        check.flag(bad, cols["date"], "unparseable date")
        values = {}
        for name in ("temperature", "visibility", "humidity", "wind_speed", "precipitation"):
            num, bad = _as_float(raw[cols[name]], trace="T" if name == "precipitation" else None)
            check.flag(bad, cols[name], "not a number")
            values[name] = num
        hum = values["humidity"]
        check.flag((hum < 0) | (hum > 100), cols["humidity"], "humidity outside [0, 100]")
        check.flag(values["precipitation"] < 0, cols["precipitation"], "negative precipitation")
        zips = raw[cols["zip"]].str.strip()
        check.flag((zips == "").to_numpy(), cols["zip"], "empty zip code")
        flags = np.array([event_flags(e) for e in raw[cols["events"]]], dtype=bool).reshape(-1, 3)
        return pd.DataFrame(
            {
                "date": day.astype("datetime64[D]").astype("datetime64[s]"),
                "zip": zips.to_numpy(),
                **values,
                "rain_flag": flags[:, 0],
                "fog_flag": flags[:, 1],
                "sun_flag": flags[:, 2],
            }
        )

    result = _parse(source, cols, delimiter, on_error, WeatherRecord, build, chunksize)
    result.frame["date"] = result.frame["date"].dt.normalize()
    return result


def parse_stations(
    source,
    columns: Mapping[str, str] | None = None,
    *,
    delimiter: str = ",",
    date_formats: Sequence[str] = DATE_FORMATS,
    on_error: str = "raise",
    chunksize: int = CHUNK_ROWS,
) -> ParseResult:
    """Parse station metadata.  A repeated station id always raises
    :class:`DuplicateStation`, whatever ``on_error`` says."""
    cols = _mapping(STATION_COLUMNS, columns)

    def build(raw, check):
        sid, bad = _as_int(raw[cols["station_id"]])
        check.flag(bad, cols["station_id"], "not an integer")
        lat, bad = _as_float(raw[cols["latitude"]])
        check.flag(bad | (np.abs(lat) > 90), cols["latitude"], "invalid latitude")
        lon, bad = _as_float(raw[cols["longitude"]])
        check.flag(bad | (np.abs(lon) > 180), cols["longitude"], "invalid longitude")
        docks, bad = _as_int(raw[cols["dock_count"]])
        check.flag(bad, cols["dock_count"], "not an integer")
        check.flag(docks <= 0, cols["dock_count"], "dock count must be positive")
        installed, bad = _as_datetime(raw[cols["installation_date"]], date_formats)
        check.flag(bad, cols["installation_date"], "unparseable date")
        return pd.DataFrame(
            {
                "station_id": sid,
                "name": raw[cols["name"]].str.strip().to_numpy(),
                "latitude": lat,
                "longitude": lon,
                "dock_count": docks,
                "city": raw[cols["city"]].str.strip().to_numpy(),
                "installation_date": installed.astype("datetime64[D]").astype("datetime64[s]"),
            }
        )

    result = _parse(source, cols, delimiter, on_error, StationMeta, build, chunksize)
    repeated = result.frame["station_id"].duplicated()
    if repeated.any():
        first = result.frame.loc[repeated.to_numpy()].iloc[0]
        raise DuplicateStation(int(first["station_id"]), int(first["row"]))
    return result


@dataclass(frozen=True)
class SnapshotGrid:
    """Bike counts for each station on a uniform tick grid.

    ``counts`` is a stations x ticks ``int32`` array; ``MISSING`` (-1) marks a
    tick with no usable observation.
    """

    stations: np.ndarray
    ticks: np.ndarray
    counts: np.ndarray
    spacing: int = TICK_SECONDS

    def __post_init__(self):
        stations = np.asarray(self.stations, dtype=np.int64)
        ticks = np.asarray(self.ticks).astype("datetime64[s]")
        counts = np.asarray(self.counts, dtype=np.int32)
        if counts.shape != (stations.size, ticks.size):
            raise ValueError(f"counts shape {counts.shape} != ({stations.size}, {ticks.size})")
        if np.unique(stations).size != stations.size:
            raise ValueError("duplicate station ids")
        if ticks.size > 1 and np.any(np.diff(ticks.astype(np.int64)) != self.spacing):
            raise ValueError(f"ticks are not spaced {self.spacing} s apart")
        if np.any(counts < MISSING):
            raise ValueError("negative counts")
        for name, arr in (("stations", stations), ("ticks", ticks), ("counts", counts)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def missing(self) -> np.ndarray:
        return self.counts == MISSING

    @property
    def n_stations(self) -> int:
        return self.stations.size

    @property
    def n_ticks(self) -> int:
        return self.ticks.size

    def coverage(self) -> np.ndarray:
        if self.n_ticks == 0:
            return np.zeros(self.n_stations)
        return 1.0 - self.missing.mean(axis=1)

    def complete_ticks(self) -> int:
        """Number of ticks at which every station reports."""
        return int((~self.missing).all(axis=0).sum())

    def index_of(self, station: int) -> int:
        hit = np.flatnonzero(self.stations == station)
        if hit.size == 0:
            raise KeyError(station)
        return int(hit[0])

    def series(self, station: int) -> np.ndarray:
        return self.counts[self.index_of(station)]

    def select(self, stations=None, start=None, end=None) -> "SnapshotGrid":
        """Sub-grid restricted to ``stations`` (in the given order) and the
        half-open time window ``[start, end)``."""
        rows = np.arange(self.n_stations) if stations is None else np.array([self.index_of(s) for s in stations], dtype=int)
        keep = np.ones(self.n_ticks, dtype=bool)
        if start is not None:
            keep &= self.ticks >= np.datetime64(start, "s")
        if end is not None:
            keep &= self.ticks < np.datetime64(end, "s")
        return SnapshotGrid(self.stations[rows], self.ticks[keep], self.counts[np.ix_(rows, keep)], self.spacing)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            self.counts.T.astype("int64"), index=pd.DatetimeIndex(self.ticks, name="timestamp"), columns=self.stations
        )
        return frame.mask(frame == MISSING).astype("Int64")

    def write_csv(self, path, delimiter: str = ",") -> None:
        frame = self.to_frame()
        frame.columns = [str(s) for s in self.stations]
        frame.to_csv(path, sep=delimiter, date_format="%Y-%m-%d %H:%M:%S", lineterminator="\n")

    @classmethod
    def read_csv(cls, path, delimiter: str = ",", spacing: int = TICK_SECONDS) -> "SnapshotGrid":
        frame = pd.read_csv(path, sep=delimiter, index_col=0, parse_dates=[0])
        counts = frame.fillna(MISSING).to_numpy().astype(np.int32).T
        stations = np.array([int(c) for c in frame.columns], dtype=np.int64)
        return cls(stations, frame.index.to_numpy(), counts, spacing)


def _status_arrays(records) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(records, ParseResult):
        records = records.frame
    if isinstance(records, pd.DataFrame):
        sid = records["station_id"].to_numpy(dtype=np.int64)
        ts = records["timestamp"].to_numpy().astype("datetime64[s]").astype(np.int64)
        bikes = records["bikes_available"].to_numpy(dtype=np.int64)
        return sid, ts, bikes
    rows = list(records)
    sid = np.array([r.station_id for r in rows], dtype=np.int64)
    ts = np.array([np.datetime64(r.timestamp, "s") for r in rows], dtype="datetime64[s]").astype(np.int64)
    bikes = np.array([r.bikes_available for r in rows], dtype=np.int64)
    return sid, ts, bikes


def resample_grid(records, spacing: int = TICK_SECONDS, max_gap: int = MAX_GAP_SECONDS) -> SnapshotGrid:
    """Sample each station's bike count at every ``spacing``-second tick.

    A tick takes the last observation at or before it.  If that observation is
    more than ``max_gap`` seconds old the tick is ``MISSING``.  Ticks sit on
    multiples of ``spacing`` since midnight, from the first tick at or after the
    earliest record to the first tick at or after the latest record.  Repeated
    (station, minute) readings keep their first occurrence in file order.
    """
    sid, ts, bikes = _status_arrays(records)
    if sid.size == 0:
        raise EmptyInput("no status records")
    order = np.lexsort((np.arange(sid.size), ts, sid))
    sid, ts, bikes = sid[order], ts[order], bikes[order]
    first = np.ones(sid.size, dtype=bool)
    first[1:] = (sid[1:] != sid[:-1]) | (ts[1:] != ts[:-1])
    sid, ts, bikes = sid[first], ts[first], bikes[first]

    t0 = -(-ts.min() // spacing) * spacing
    t1 = -(-ts.max() // spacing) * spacing
    ticks = np.arange(t0, t1 + 1, spacing, dtype=np.int64)

    stations, starts = np.unique(sid, return_index=True)
    bounds = np.append(starts, sid.size)
    counts = np.full((stations.size, ticks.size), MISSING, dtype=np.int32)
    for row in range(stations.size):
        lo, hi = bounds[row], bounds[row + 1]
        st, sb = ts[lo:hi], bikes[lo:hi]
        idx = np.searchsorted(st, ticks, side="right") - 1
        ok = idx >= 0
        ok[ok] &= (ticks[ok] - st[idx[ok]]) <= max_gap
        counts[row, ok] = sb[idx[ok]]
    return SnapshotGrid(stations, ticks.astype("datetime64[s]"), counts, spacing)


@dataclass
class CleaningLog:
    min_coverage: float
    stations_before: int
    stations_after: int
    ticks_before: int
    ticks_after: int
    complete_ticks_before: int
    complete_ticks_after: int
    first_tick: str
    last_tick: str
    dropped: list[dict] = field(default_factory=list)
    iterations: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def clean_stations(grid: SnapshotGrid, min_coverage: float = 0.9) -> tuple[SnapshotGrid, CleaningLog]:
    """Drop poorly covered stations and trim ticks to the span all survivors cover.

    Coverage is the non-missing fraction over the current tick span.  Dropping and
    trimming alternate until neither changes anything, so the result is a fixed
    point and a second call is a no-op.
    """
    if not 0.0 <= min_coverage <= 1.0:
        raise ValueError("min_coverage must be in [0, 1]")
    stations_before, ticks_before = grid.n_stations, grid.n_ticks
    complete_before = grid.complete_ticks()
    dropped: list[dict] = []
    current = grid
    iterations = 0
    while True:
        iterations += 1
        cov = current.coverage()
        low = cov < min_coverage
        if low.all():
            raise AllStationsDropped(f"no station reaches coverage {min_coverage}")
        for s, c in zip(current.stations[low], cov[low]):
            dropped.append({"station_id": int(s), "coverage": float(c), "iteration": iterations})
        kept = current.stations[~low]
        reporting = ~current.missing[~low]
        firsts = reporting.argmax(axis=1)
        lasts = reporting.shape[1] - 1 - reporting[:, ::-1].argmax(axis=1)
        lo, hi = firsts.max(), lasts.min()
        if hi < lo:
            raise AllStationsDropped("retained stations never report at a common tick")
        trimmed = current.select(kept).select(start=current.ticks[lo], end=current.ticks[hi] + np.timedelta64(1, "s"))
        if trimmed.n_stations == current.n_stations and trimmed.n_ticks == current.n_ticks:
            break
        current = trimmed
    log = CleaningLog(
        min_coverage=min_coverage,
        stations_before=stations_before,
        stations_after=current.n_stations,
        ticks_before=ticks_before,
        ticks_after=current.n_ticks,
        complete_ticks_before=complete_before,
        complete_ticks_after=current.complete_ticks(),
        first_tick=str(current.ticks[0]),
        last_tick=str(current.ticks[-1]),
        dropped=dropped,
        iterations=iterations,
    )
    for d in dropped:
        logger.info("dropped station %d (coverage %.3f)", d["station_id"], d["coverage"])
    return current, log
