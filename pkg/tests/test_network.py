import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bikecast.errors import EmptyStationList, UnknownStation
from bikecast.network import (
    TripAdjacency,
    build_adjacency,
    busiest_stations,
    calibrate_edge_weight,
    neighbor_sets,
    partition_regions,
    read_neighbors,
    top_k_neighbors,
    write_neighbors,
)


@pytest.fixture
def small():
    return build_adjacency([(1, 2), (1, 2), (3, 2)], [1, 2, 3])


def test_adjacency_counts(small):
    expected = np.zeros((3, 3), dtype=int)
    expected[0, 1] = 2
    expected[2, 1] = 1
    assert np.array_equal(small.counts, expected)


def test_round_trip_on_diagonal():
    adj = build_adjacency([(2, 2), (1, 2)], [1, 2])
    assert adj.counts[1, 1] == 1
    assert top_k_neighbors(adj, 2).neighbors == (1,)


def test_unknown_trips_are_skipped():
    adj = build_adjacency([(1, 2), (1, 9), (8, 9)], [1, 2])
    assert adj.total == 1 and adj.skipped == 2


def test_empty_station_list():
    with pytest.raises(EmptyStationList):
        build_adjacency([(1, 2)], [])


def test_adjacency_accepts_parsed_trips(parsed):
    trips = parsed["trips"]
    stations = parsed["stations"].frame["station_id"]
    adj = build_adjacency(trips, stations)
    assert adj.total + adj.skipped == len(trips)


trip_lists = st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8)), max_size=60)


@settings(max_examples=60, deadline=None)
@given(trip_lists, st.sets(st.integers(0, 8), min_size=1))
def test_conservation(trips, stations):
    adj = build_adjacency(trips, sorted(stations))
    assert adj.total + adj.skipped == len(trips)
    inside = sum(1 for a, b in trips if a in stations and b in stations)
    assert adj.total == inside


def test_top_k_example(small):
    assert top_k_neighbors(small, 2, 10).neighbors == (1, 3)


def test_ties_break_by_lower_id():
    adj = build_adjacency([(7, 1)] * 5 + [(4, 1)] * 5 + [(9, 1)] * 6, [1, 4, 7, 9])
    assert top_k_neighbors(adj, 1).neighbors == (9, 4, 7)
    assert top_k_neighbors(adj, 1, 2).neighbors == (9, 4)


def test_unknown_station(small):
    with pytest.raises(UnknownStation):
        top_k_neighbors(small, 42)


matrices = st.integers(1, 7).flatmap(lambda n: arrays(np.int64, (n, n), elements=st.integers(0, 6)))


@settings(max_examples=80, deadline=None)
@given(matrices, st.integers(1, 4))
def test_neighbors_exclude_self_and_are_ranked(counts, k):
    adj = TripAdjacency(np.arange(10, 10 + counts.shape[0]), counts)
    for s, ns in neighbor_sets(adj, k).items():
        i = adj.index_of(s)
        assert s not in ns.neighbors
        sources = [j for j in range(counts.shape[0]) if j != i and counts[j, i] > 0]
        assert len(ns.neighbors) == min(k, len(sources))
        # brute force: sort sources by (-count, id)
        ranked = sorted(sources, key=lambda j: (-counts[j, i], adj.stations[j]))[:k]
        assert ns.neighbors == tuple(int(adj.stations[j]) for j in ranked)


def test_neighbors_csv_round_trip(tmp_path, small):
    sets = neighbor_sets(small)
    write_neighbors(sets, tmp_path / "n.csv")
    back = read_neighbors(tmp_path / "n.csv")
    assert back[2] == sets[2]
    assert all(not sets[s].neighbors for s in sets if s not in back)


def test_two_blocks_two_regions():
    counts = np.zeros((4, 4), dtype=int)
    counts[0, 1] = counts[1, 0] = 30
    counts[2, 3] = 40
    part = partition_regions(TripAdjacency([1, 2, 3, 4], counts), 20)
    assert part.n_regions == 2
    assert part.regions() == {1: [1, 2], 2: [3, 4]}
    assert part.intra_fraction == 1.0


def test_complete_graph_one_region():
    counts = np.full((5, 5), 25)
    assert partition_regions(TripAdjacency(np.arange(5), counts), 20).n_regions == 1


def test_regions_numbered_by_smallest_member():
    counts = np.zeros((4, 4), dtype=int)
    counts[0, 3] = 50  # stations 5 and 8
    counts[1, 2] = 50  # stations 6 and 7
    part = partition_regions(TripAdjacency([5, 6, 7, 8], counts), 20)
    assert part.assignment == {5: 1, 8: 1, 6: 2, 7: 2}


def test_diagonal_never_links():
    counts = np.diag([100, 100])
    assert partition_regions(TripAdjacency([1, 2], counts), 1).n_regions == 2


def intra_oracle(counts, assignment, stations):
    total = counts.sum()
    if total == 0:
        return 1.0
    same = sum(counts[a, b] for a in range(len(stations)) for b in range(len(stations)) if assignment[stations[a]] == assignment[stations[b]])
    return same / total


@settings(max_examples=60, deadline=None)
@given(matrices, st.integers(0, 12), st.integers(0, 12))
def test_partition_properties(counts, w1, w2):
    stations = list(range(100, 100 + counts.shape[0]))
    adj = TripAdjacency(stations, counts)
    lo, hi = sorted((w1, w2))
    a, b = partition_regions(adj, lo), partition_regions(adj, hi)
    assert a.n_regions <= b.n_regions
    for part in (a, b):
        assert sorted(part.assignment) == stations
        assert sorted(set(part.assignment.values())) == list(range(1, part.n_regions + 1))
        assert 0.0 <= part.intra_fraction <= 1.0
        assert part.intra_fraction == pytest.approx(intra_oracle(counts, part.assignment, stations), abs=1e-12)


def test_calibrate_edge_weight():
    counts = np.zeros((4, 4), dtype=int)
    counts[0, 1] = 30
    counts[1, 2] = 5
    counts[2, 3] = 30
    adj = TripAdjacency([1, 2, 3, 4], counts)
    w = calibrate_edge_weight(adj, 2)
    assert w == 6 and partition_regions(adj, w).n_regions == 2
    assert calibrate_edge_weight(adj, 3) is None


def test_adjacency_csv_round_trip(tmp_path, small):
    small.write_csv(tmp_path / "a.csv")
    back = TripAdjacency.read_csv(tmp_path / "a.csv")
    assert np.array_equal(back.counts, small.counts) and back.stations.tolist() == [1, 2, 3]


def test_busiest_stations():
    adj = build_adjacency([(1, 2)] * 3 + [(3, 4)] * 2 + [(5, 5)], [1, 2, 3, 4, 5])
    assert busiest_stations(adj, 2) == [1, 2]
    assert busiest_stations(adj, 4) == [1, 2, 3, 4]
