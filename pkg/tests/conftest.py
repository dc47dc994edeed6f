import numpy as np
import pytest

from bikecast.evaluate import DataBundle
from bikecast.features import WeatherTable, station_zips
from bikecast.ingest import clean_stations, parse_stations, parse_status, parse_trips, parse_weather, resample_grid
from bikecast.network import build_adjacency, neighbor_sets, partition_regions
from bikecast.synthetic import simulate_system


@pytest.fixture(scope="session")
def system_dir(tmp_path_factory):
    """Three simulated weeks in the public file layout."""
    d = tmp_path_factory.mktemp("system")
    simulate_system(start="2014-03-03", days=21, seed=5).write(d)
    return d


@pytest.fixture(scope="session")
def parsed(system_dir):
    stations = parse_stations(system_dir / "station.csv")
    return {
        "stations": stations,
        "status": parse_status(system_dir / "status.csv"),
        "trips": parse_trips(system_dir / "trip.csv", known_stations=stations.frame["station_id"]),
        "weather": parse_weather(system_dir / "weather.csv"),
    }


@pytest.fixture(scope="session")
def bundle(parsed):
    grid, _ = clean_stations(resample_grid(parsed["status"]))
    adj = build_adjacency(parsed["trips"], grid.stations)
    return DataBundle(
        grid=grid,
        neighbors=neighbor_sets(adj, 10),
        weather=WeatherTable.from_records(parsed["weather"]),
        zips=station_zips(parsed["stations"]),
        partition=partition_regions(adj),
        stations=[39, 40, 41],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """``verdict(n, status, detail)`` prints and records one line per criterion."""

    def record(criterion, status, detail):
        line = f"criterion {criterion:>2}: {status:<4} {detail}"
        print(line)
        request.config.acceptance_lines.append(line)

    return record
