"""Turn trip records into a station graph: in-degree neighbours and regions."""
import tempfile

from bikecast import build_adjacency, neighbor_sets, parse_stations, parse_trips, partition_regions
from bikecast.network import busiest_stations, calibrate_edge_weight
from bikecast.synthetic import simulate_system

DATA = tempfile.mkdtemp(prefix="bikecast-demo-")
simulate_system(start="2014-03-03", days=28, seed=2).write(DATA)

stations = parse_stations(f"{DATA}/station.csv").frame
trips = parse_trips(f"{DATA}/trip.csv")
adj = build_adjacency(trips, stations["station_id"])
print(f"{adj.total} trips between {len(adj.stations)} stations")

busy = busiest_stations(adj, 3)
sets = neighbor_sets(adj, k=5)
for sid in busy:
    ns = sets[sid]
    print(f"station {sid}: most arrivals come from {list(ns.neighbors)}")

# edges lighter than the threshold are cut; connected components become regions
for w in (0, 5, 20, 80):
    part = partition_regions(adj, w)
    print(f"edge weight >= {w:>3}: {part.n_regions:>2} regions, {part.intra_fraction:.3f} of trips stay inside one")

city = dict(zip(stations["station_id"], stations["city"]))
part = partition_regions(adj, 20)
for region, members in part.regions().items():
    print(f"region {region}: {len(members):>2} stations in {sorted({city[s] for s in members})}")

print("smallest threshold giving five regions:", calibrate_edge_weight(adj, 5))
