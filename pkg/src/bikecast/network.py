"""Trip-count graph: adjacency matrix, in-degree neighbours and region partition."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import EmptyStationList, UnknownStation
from .ingest import ParseResult

DEFAULT_NEIGHBORS = 10
# Minimum symmetrised trip count for two stations to count as linked when
# carving regions.  Not calibrated against the full trip file; see
# calibrate_edge_weight for the calibration routine.
DEFAULT_REGION_EDGE_WEIGHT = 20


@dataclass(frozen=True)
class TripAdjacency:
    """``counts[j, i]`` is the number of trips that start at ``stations[j]``
    and end at ``stations[i]``."""

    stations: np.ndarray
    counts: np.ndarray
    skipped: int = 0

    def __post_init__(self):
        stations = np.asarray(self.stations, dtype=np.int64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (stations.size, stations.size):
            raise ValueError("adjacency must be N x N over the station list")
        if np.any(counts < 0):
            raise ValueError("negative trip counts")
        stations.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "stations", stations)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def index_of(self, station: int) -> int:
        hit = np.flatnonzero(self.stations == station)
        if hit.size == 0:
            raise UnknownStation(f"station {station} is not in the adjacency")
        return int(hit[0])

    def restrict(self, stations: Iterable[int]) -> "TripAdjacency":
        """Sub-matrix over ``stations``; trips leaving the subset count as skipped."""
        rows = np.array([self.index_of(s) for s in stations], dtype=int)
        sub = self.counts[np.ix_(rows, rows)]
        return TripAdjacency(self.stations[rows], sub, self.skipped + self.total - int(sub.sum()))

    def write_csv(self, path, delimiter: str = ",") -> None:
        labels = [str(s) for s in self.stations]
        frame = pd.DataFrame(self.counts, index=pd.Index(labels, name="from\\to"), columns=labels)
        frame.to_csv(path, sep=delimiter, lineterminator="\n")

    @classmethod
    def read_csv(cls, path, delimiter: str = ",") -> "TripAdjacency":
        frame = pd.read_csv(path, sep=delimiter, index_col=0)
        stations = np.array([int(c) for c in frame.columns], dtype=np.int64)
        return cls(stations, frame.to_numpy(dtype=np.int64))


@dataclass(frozen=True)
class NeighborSet:
    station_id: int
    neighbors: tuple[int, ...]


@dataclass(frozen=True)
class RegionPartition:
    assignment: Mapping[int, int]
    n_regions: int
    intra_fraction: float
    min_edge_weight: float = 0.0

    def members(self, region: int) -> list[int]:
        return sorted(s for s, z in self.assignment.items() if z == region)

    def regions(self) -> dict[int, list[int]]:
        return {z: self.members(z) for z in range(1, self.n_regions + 1)}

    def write_csv(self, path, delimiter: str = ",") -> None:
        rows = sorted(self.assignment.items())
        pd.DataFrame(rows, columns=["station_id", "region"]).to_csv(path, sep=delimiter, index=False, lineterminator="\n")

    @classmethod
    def read_csv(cls, path, adjacency: TripAdjacency | None = None, delimiter: str = ",") -> "RegionPartition":
        frame = pd.read_csv(path, sep=delimiter)
        assignment = {int(s): int(z) for s, z in zip(frame["station_id"], frame["region"])}
        n = max(assignment.values()) if assignment else 0
        intra = _intra_fraction(adjacency, assignment) if adjacency is not None else float("nan")
        return cls(assignment, n, intra)


def _trip_endpoints(trips) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(trips, ParseResult):
        trips = trips.frame
    if isinstance(trips, pd.DataFrame):
        return trips["start_station"].to_numpy(dtype=np.int64), trips["end_station"].to_numpy(dtype=np.int64)
    pairs = [(t.start_station, t.end_station) if hasattr(t, "start_station") else tuple(t) for t in trips]
    arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def build_adjacency(trips, stations: Iterable[int]) -> TripAdjacency:
    """Count trips between every ordered pair of known stations.

    ``trips`` may be a parsed trip table, a frame with ``start_station`` /
    ``end_station`` columns, ``TripRecord`` objects or plain (start, end) pairs.
    Round trips land on the diagonal.  Trips with an endpoint outside
    ``stations`` are tallied in ``skipped``.
    """
    stations = np.asarray(list(stations), dtype=np.int64)
    if stations.size == 0:
        raise EmptyStationList("station list is empty")
    if np.unique(stations).size != stations.size:
        raise ValueError("duplicate station ids")
    start, end = _trip_endpoints(trips)
    order = np.argsort(stations, kind="stable")
    sorted_ids = stations[order]

    def locate(ids):
        pos = np.searchsorted(sorted_ids, ids)
        pos = np.clip(pos, 0, sorted_ids.size - 1)
        ok = sorted_ids[pos] == ids
        return order[pos], ok

    j, ok_j = locate(start)
    i, ok_i = locate(end)
    ok = ok_j & ok_i
    counts = np.zeros((stations.size, stations.size), dtype=np.int64)
    np.add.at(counts, (j[ok], i[ok]), 1)
    return TripAdjacency(stations, counts, int((~ok).sum()))


def top_k_neighbors(adjacency: TripAdjacency, station: int, k: int = DEFAULT_NEIGHBORS) -> NeighborSet:
    """The ``k`` stations sending the most trips to ``station``.

    Only stations with at least one trip into ``station`` qualify, the station
    itself never does.  Equal counts are ordered by ascending station id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    i = adjacency.index_of(station)
    inbound = adjacency.counts[:, i].copy()
    inbound[i] = 0
    candidates = np.flatnonzero(inbound > 0)
    ids = adjacency.stations[candidates]
    ranked = candidates[np.lexsort((ids, -inbound[candidates]))][:k]
    return NeighborSet(int(station), tuple(int(s) for s in adjacency.stations[ranked]))


def neighbor_sets(adjacency: TripAdjacency, k: int = DEFAULT_NEIGHBORS) -> dict[int, NeighborSet]:
    return {int(s): top_k_neighbors(adjacency, int(s), k) for s in adjacency.stations}


def _components(adjacency: TripAdjacency, min_edge_weight: float) -> tuple[int, np.ndarray]:
    sym = adjacency.counts + adjacency.counts.T
    np.fill_diagonal(sym, 0)
    edges = (sym >= min_edge_weight) & (sym > 0)
    n, labels = connected_components(csr_matrix(edges), directed=False)
    return n, labels


def _intra_fraction(adjacency: TripAdjacency, assignment: Mapping[int, int]) -> float:
    total = adjacency.total
    if total == 0:
        return 1.0
    z = np.array([assignment.get(int(s), -1) for s in adjacency.stations])
    same = (z[:, None] == z[None, :]) & (z[:, None] >= 0)
    return float(adjacency.counts[same].sum() / total)


def partition_regions(adjacency: TripAdjacency, min_edge_weight: float = DEFAULT_REGION_EDGE_WEIGHT) -> RegionPartition:
    """Split the network into regions of stations linked by frequent trips.

    Both trip directions are added, pairs with fewer than ``min_edge_weight``
    trips are unlinked and each connected component becomes a region.  Regions
    are numbered from 1 in order of their smallest station id.
    """
    _, labels = _components(adjacency, min_edge_weight)
    smallest: dict[int, int] = {}
    for s, lab in zip(adjacency.stations, labels):
        smallest[lab] = min(smallest.get(lab, s), s)
    rank = {lab: z for z, lab in enumerate(sorted(smallest, key=smallest.get), start=1)}
    assignment = {int(s): rank[lab] for s, lab in zip(adjacency.stations, labels)}
    return RegionPartition(assignment, len(rank), _intra_fraction(adjacency, assignment), float(min_edge_weight))


def calibrate_edge_weight(adjacency: TripAdjacency, n_regions: int) -> int | None:
    """Smallest integer edge weight giving exactly ``n_regions`` regions, or None.

    Component counts only grow with the weight, so the first candidate weight
    that reaches ``n_regions`` is the answer if any is.
    """
    sym = adjacency.counts + adjacency.counts.T
    np.fill_diagonal(sym, 0)
    candidates = np.unique(np.concatenate([[0], sym[sym > 0] + 1, sym[sym > 0]]))
    for w in candidates:
        n, _ = _components(adjacency, w)
        if n == n_regions:
            return int(w)
        if n > n_regions:
            return None
    return None


def write_neighbors(sets: Mapping[int, NeighborSet], path, delimiter: str = ",") -> None:
    """One row per (station, rank, neighbour)."""
    rows = [(s, r + 1, j) for s in sorted(sets) for r, j in enumerate(sets[s].neighbors)]
    pd.DataFrame(rows, columns=["station_id", "rank", "neighbor_id"]).to_csv(path, sep=delimiter, index=False, lineterminator="\n")


def read_neighbors(path, delimiter: str = ",") -> dict[int, NeighborSet]:
    frame = pd.read_csv(path, sep=delimiter).sort_values(["station_id", "rank"], kind="stable")
    out = {}
    for s, part in frame.groupby("station_id", sort=True):
        out[int(s)] = NeighborSet(int(s), tuple(int(j) for j in part["neighbor_id"]))
    return out


def busiest_stations(adjacency: TripAdjacency, k: int) -> list[int]:
    """The ``k`` stations with the most trips starting or ending there (ties by id)."""
    volume = adjacency.counts.sum(axis=0) + adjacency.counts.sum(axis=1)
    order = np.lexsort((adjacency.stations, -volume))
    return sorted(int(s) for s in adjacency.stations[order[:k]])
