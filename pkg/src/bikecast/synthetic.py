"""Simulated bike-share system written in the public dataset's file layout.

Used by the tests and demos in place of the real Bay Area files.  Five cities
with commuter flows: residential stations empty in the morning and refill in
the evening, office stations do the opposite.  Nearly every trip stays inside
its city, an overnight truck rebalances some stations, rain suppresses demand,
a couple of stations open part-way through the period and one goes dark for a
few days.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from numba import njit

# name, weather zip, centre (lat, lon), default station count, first station id,
# trips per station per day
CITIES = (
    ("San Jose", "95113", 37.3365, -121.8907, 10, 2, 9.0),
    ("Redwood City", "94063", 37.4862, -122.2295, 4, 21, 5.0),
    ("Mountain View", "94041", 37.3947, -122.0764, 5, 27, 8.0),
    ("Palo Alto", "94301", 37.4443, -122.1598, 5, 34, 6.0),
    ("San Francisco", "94107", 37.7890, -122.4010, 16, 39, 40.0),
)
# cities with a little cross traffic between them
LINKED_CITIES = {("Mountain View", "Palo Alto"), ("Palo Alto", "Redwood City")}
MINUTES_PER_DAY = 1440
RING = 1024  # arrivals are at most RING - 1 minutes after departure


@dataclass
class SyntheticSystem:
    stations: pd.DataFrame
    status: pd.DataFrame
    trips: pd.DataFrame
    weather: pd.DataFrame

    def write(self, directory) -> dict[str, Path]:
        """Write ``station.csv``, ``status.csv``, ``trip.csv`` and ``weather.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, frame in (("station", self.stations), ("status", self.status), ("trip", self.trips), ("weather", self.weather)):
            path = directory / f"{name}.csv"
            frame.to_csv(path, index=False, lineterminator="\n")
            paths[name] = path
        return paths


def _gauss(minutes, centre, width):
    return np.exp(-0.5 * ((minutes - centre) / width) ** 2)


def _profiles(role: np.ndarray) -> np.ndarray:
    """Departure intensity shape, (2 day types, 1440 minutes, stations), mean 1 per day."""
    mins = np.arange(MINUTES_PER_DAY, dtype=float)[:, None]
    morning, evening = _gauss(mins, 8 * 60 + 15, 55), _gauss(mins, 17 * 60 + 30, 70)
    midday = _gauss(mins, 12 * 60 + 30, 120)
    weekday = (1 - role) * 3.0 * morning + role * 3.0 * evening + 0.8 * midday + 0.08
    weekend = 1.4 * _gauss(mins, 13 * 60 + 30, 170) + 0.05 + 0 * role
    out = np.stack([weekday, weekend])
    return out / out.mean(axis=1, keepdims=True)


def _haversine_km(lat, lon):
    la, lo = np.radians(lat), np.radians(lon)
    dlat = la[:, None] - la[None, :]
    dlon = lo[:, None] - lo[None, :]
    a = np.sin(dlat / 2) ** 2 + np.cos(la[:, None]) * np.cos(la[None, :]) * np.sin(dlon / 2) ** 2
    return 6371.0 * 2 * np.arcsin(np.sqrt(a))


@njit(cache=True)
def _simulate(
    n_minutes, start_dow, rates, day_factor, cdf, travel, docks, bikes0, active_from, nearest,
    rebalance_prob, target, status_every, silent_from, silent_to, seed, trip_capacity,
):
    np.random.seed(seed)
    S = docks.size
    bikes = bikes0.copy()
    head = np.full(RING, -1, dtype=np.int64)
    nxt = np.full(trip_capacity, -1, dtype=np.int64)
    t_start = np.zeros(trip_capacity, dtype=np.int64)
    t_end = np.zeros(trip_capacity, dtype=np.int64)
    s_from = np.zeros(trip_capacity, dtype=np.int64)
    s_to = np.zeros(trip_capacity, dtype=np.int64)
    n_trips = 0
    n_status_max = S * (n_minutes // status_every + 1)
    st_station = np.zeros(n_status_max, dtype=np.int64)
    st_minute = np.zeros(n_status_max, dtype=np.int64)
    st_bikes = np.zeros(n_status_max, dtype=np.int64)
    n_status = 0
    for t in range(n_minutes):
        day = t // MINUTES_PER_DAY
        mod = t % MINUTES_PER_DAY
        weekend = 1 if (start_dow + day) % 7 >= 5 else 0
        if mod < 6 * 60:
            period = 2
        elif mod < 11 * 60:
            period = 0
        elif mod < 15 * 60:
            period = 2
        elif mod < 21 * 60:
            period = 1
        else:
            period = 2
        if weekend == 1:
            period = 2
        slot = t % RING
        k = head[slot]
        head[slot] = -1
        while k >= 0:
            e = s_to[k]
            if bikes[e] >= docks[e]:
                for c in range(S):
                    alt = nearest[e, c]
                    if active_from[alt] <= day and bikes[alt] < docks[alt]:
                        e = alt
                        break
                s_to[k] = e
                t_end[k] = t + 2
            if bikes[e] < docks[e]:
                bikes[e] += 1
            k = nxt[k]
        for s in range(S):
            if active_from[s] > day:
                continue
            lam = rates[weekend, mod, s] * day_factor[day, s]
            n = np.random.poisson(lam)
            for _ in range(n):
                if bikes[s] == 0 or n_trips >= trip_capacity:
                    break
                u = np.random.random()
                phase = 1 if day >= active_from.max() else 0
                row = cdf[phase, period, s]
                j = np.searchsorted(row, u * row[S - 1])
                if j >= S:
                    j = S - 1
                dur = int(travel[s, j] * np.exp(0.3 * np.random.standard_normal()))
                dur = max(2, min(dur, RING - 1))
                bikes[s] -= 1
                t_start[n_trips] = t
                t_end[n_trips] = t + dur
                s_from[n_trips] = s
                s_to[n_trips] = j
                bucket = (t + dur) % RING
                nxt[n_trips] = head[bucket]
                head[bucket] = n_trips
                n_trips += 1
        if mod == 3 * 60:
            for s in range(S):
                if np.random.random() < rebalance_prob[s]:
                    bikes[s] = target[s]
        if mod == 13 * 60:
            for s in range(S):
                if np.random.random() < 0.25 * rebalance_prob[s]:
                    bikes[s] = target[s]
        if t % status_every == 0:
            for s in range(S):
                if active_from[s] > day or (silent_from[s] <= day < silent_to[s]):
                    continue
                st_station[n_status] = s
                st_minute[n_status] = t
                st_bikes[n_status] = bikes[s]
                n_status += 1
    return (
        t_start[:n_trips], t_end[:n_trips], s_from[:n_trips], s_to[:n_trips],
        st_station[:n_status], st_minute[:n_status], st_bikes[:n_status],
    )


def _weather(days: pd.DatetimeIndex, rng: np.random.Generator) -> tuple[pd.DataFrame, dict[str, np.ndarray]]:
    doy = days.dayofyear.to_numpy()
    n = days.size
    wet_season = np.isin(days.month, [11, 12, 1, 2, 3])
    regional_rain = rng.random(n) < np.where(wet_season, 0.28, 0.04)
    regional_fog = rng.random(n) < 0.12
    rows, factor = [], {}
    for name, zip_code, *_ in CITIES:
        offset = -4.0 if name == "San Francisco" else 0.0
        temp = np.round(62 + offset + 9 * np.sin(2 * np.pi * (doy - 110) / 365) + rng.normal(0, 3, n))
        rain = regional_rain & (rng.random(n) < 0.9)
        fog = (regional_fog | (rng.random(n) < (0.1 if name == "San Francisco" else 0.02)))
        precip = np.where(rain, np.round(rng.gamma(1.2, 0.25, n), 2), 0.0)
        humidity = np.clip(np.round(62 + 18 * rain + 10 * fog + rng.normal(0, 7, n)), 20, 100)
        visibility = np.where(fog, rng.integers(4, 9, n), 10)
        wind = np.clip(np.round(7 + 4 * rain + rng.normal(0, 3, n)), 0, None)
        for i, day in enumerate(days):
            events = "-".join(e for e, on in (("Fog", fog[i]), ("Rain", rain[i])) if on)
            p = precip[i]
            p_text = "T" if (not rain[i] and fog[i] and rng.random() < 0.3) else f"{p:g}"
            rows.append(
                {
                    "date": f"{day.month}/{day.day}/{day.year}",
                    "max_temperature_f": int(temp[i] + 8),
                    "mean_temperature_f": int(temp[i]),
                    "min_temperature_f": int(temp[i] - 8),
                    "mean_humidity": int(humidity[i]),
                    "mean_visibility_miles": int(visibility[i]),
                    "mean_wind_speed_mph": int(wind[i]),
                    "precipitation_inches": p_text,
                    "cloud_cover": int(rng.integers(0, 8)),
                    "events": events,
                    "zip_code": zip_code,
                }
            )
        factor[name] = np.where(rain, 0.55, 1.0) * (1 + 0.012 * (temp - 62)) * np.where(fog, 0.93, 1.0)
    return pd.DataFrame(rows), factor


def simulate_system(
    start: str = "2014-03-01",
    days: int = 60,
    *,
    stations_per_city: dict[str, int] | None = None,
    late_stations: int = 2,
    outage_stations: int = 1,
    status_every: int = 5,
    inter_city_share: float = 0.003,
    linked_city_share: float = 0.01,
    demand_scale: float = 1.0,
    seed: int = 0,
) -> SyntheticSystem:
    """Simulate ``days`` days of operation starting at ``start`` (midnight).

    ``late_stations`` extra San Francisco stations open halfway through;
    ``outage_stations`` stations stop reporting status for three days.
    Status is logged every ``status_every`` minutes.
    """
    rng = np.random.default_rng(seed)
    counts = {c[0]: c[4] for c in CITIES}
    if stations_per_city:
        counts.update(stations_per_city)
    ids, names, lats, lons, cities, dock, rate = [], [], [], [], [], [], []
    for name, _, lat0, lon0, _, first_id, per_day in CITIES:
        n = counts[name] + (late_stations if name == "San Francisco" else 0)
        for k in range(n):
            late = name == "San Francisco" and k >= counts[name]
            ids.append(80 + k - counts[name] if late else first_id + k)
            names.append(f"{name} Station {k + 1}")
            lats.append(lat0 + rng.normal(0, 0.008))
            lons.append(lon0 + rng.normal(0, 0.008))
            cities.append(name)
            dock.append(int(rng.choice([15, 19, 23, 27]) if name == "San Francisco" else rng.choice([11, 15, 19])))
            rate.append(per_day * rng.lognormal(0, 0.35) * demand_scale)
    S = len(ids)
    lat, lon = np.array(lats), np.array(lons)
    dock_arr = np.array(dock, dtype=np.int64)
    per_day = np.array(rate)
    role = rng.beta(1.2, 1.2, S)
    city_idx = np.array([[c[0] for c in CITIES].index(c) for c in cities])
    late_mask = np.array([i >= 80 for i in ids])
    start_ts = pd.Timestamp(start)
    n_minutes = days * MINUTES_PER_DAY
    active_from = np.where(late_mask, days // 2, 0).astype(np.int64)

    dist = _haversine_km(lat, lon)
    same_city = city_idx[:, None] == city_idx[None, :]
    linked = np.zeros((S, S), dtype=bool)
    for a, b in LINKED_CITIES:
        ia, ib = [c[0] for c in CITIES].index(a), [c[0] for c in CITIES].index(b)
        linked |= ((city_idx[:, None] == ia) & (city_idx[None, :] == ib)) | ((city_idx[:, None] == ib) & (city_idx[None, :] == ia))
    popularity = rng.lognormal(0, 0.4, S)
    cdf = np.zeros((2, 3, S, S))
    for phase in range(2):
        avail = np.ones(S) if phase else (~late_mask).astype(float)
        for period, pull in enumerate(((0.15 + role) ** 2, (1.15 - role) ** 2, np.ones(S))):
            w = popularity * pull * avail
            local = np.where(same_city, np.exp(-dist / 1.2), 0.0) * w[None, :]
            np.fill_diagonal(local, local.diagonal() * 0.2)
            local /= local.sum(axis=1, keepdims=True)
            far = np.where(~same_city, w[None, :], 0.0)
            near_city = np.where(linked, w[None, :], 0.0)
            far /= np.maximum(far.sum(axis=1, keepdims=True), 1e-12)
            near_city /= np.maximum(near_city.sum(axis=1, keepdims=True), 1e-12)
            has_link = near_city.sum(axis=1, keepdims=True) > 0
            mix = (1 - inter_city_share - linked_city_share * has_link) * local + inter_city_share * far + linked_city_share * has_link * near_city
            cdf[phase, period] = np.cumsum(mix, axis=1)
    travel = np.where(same_city, 3 + dist / 0.2, 25 + dist / 0.33)

    profiles = _profiles(role)  # (2, 1440, S), mean 1
    rates = profiles * (per_day / MINUTES_PER_DAY)[None, None, :]
    weather, factor = _weather(pd.date_range(start_ts, periods=days, freq="D"), rng)
    day_factor = np.column_stack([factor[cities[s]] for s in range(S)])
    target = np.round(dock_arr * np.clip(0.75 - 0.5 * role, 0.2, 0.8)).astype(np.int64)
    bikes0 = target.copy()
    nearest = np.argsort(np.where(same_city, dist, 1e6), axis=1, kind="stable").astype(np.int64)
    rebalance_prob = np.where(city_idx == 4, 0.35, 0.1)
    silent_from = np.zeros(S, dtype=np.int64)
    silent_to = np.zeros(S, dtype=np.int64)
    for s in rng.choice(np.flatnonzero(~late_mask), size=outage_stations, replace=False):
        silent_from[s] = int(rng.integers(days // 4, max(days // 4 + 1, days - 4)))
        silent_to[s] = silent_from[s] + 3
    expected = rates.mean(axis=1).max(axis=0).sum() * n_minutes * 1.6 + 1000

    t0, t1, a, b, st_s, st_m, st_b = _simulate(
        n_minutes, start_ts.dayofweek, rates, day_factor, cdf, travel, dock_arr, bikes0, active_from, nearest,
        rebalance_prob, target, status_every, silent_from, silent_to, int(rng.integers(2**31 - 1)), int(expected),
    )

    ids_arr = np.array(ids)
    minute_text = _minute_strings(start_ts, n_minutes + RING + 2)
    status = pd.DataFrame(
        {
            "station_id": ids_arr[st_s],
            "bikes_available": st_b,
            "docks_available": dock_arr[st_s] - st_b,
            "time": pd.Series(minute_text["status"])[st_m].to_numpy(),
        }
    )
    trip_ids = np.arange(t0.size) + 4000
    seconds = (t1 - t0) * 60 + rng.integers(0, 60, t0.size)
    trips = pd.DataFrame(
        {
            "id": trip_ids,
            "duration": seconds,
            "start_date": pd.Series(minute_text["trip"])[t0].to_numpy(),
            "start_station_name": np.array(names)[a],
            "start_station_id": ids_arr[a],
            "end_date": pd.Series(minute_text["trip"])[t1].to_numpy(),
            "end_station_name": np.array(names)[b],
            "end_station_id": ids_arr[b],
            "bike_id": rng.integers(1, 700, t0.size),
            "subscription_type": np.where(rng.random(t0.size) < 0.8, "Subscriber", "Customer"),
            "zip_code": rng.choice(["94107", "94041", "95113", "94301", "94063"], t0.size),
        }
    )
    install = [start_ts + pd.Timedelta(days=int(d)) for d in active_from]
    stations = pd.DataFrame(
        {
            "id": ids_arr,
            "name": names,
            "lat": np.round(lat, 6),
            "long": np.round(lon, 6),
            "dock_count": dock_arr,
            "city": cities,
            "installation_date": [f"{d.month}/{d.day}/{d.year}" for d in install],
        }
    )
    return SyntheticSystem(stations, status, trips, weather)


def _minute_strings(start: pd.Timestamp, n: int) -> dict[str, np.ndarray]:
    stamps = pd.date_range(start, periods=n, freq="min")
    return {
        "status": stamps.strftime("%Y/%m/%d %H:%M:01").to_numpy(),
        "trip": np.array([f"{s.month}/{s.day}/{s.year} {s.hour}:{s.minute:02d}" for s in stamps]),
    }
