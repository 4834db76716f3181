import math

import numpy as np
import pytest

from evcmab.experiment import GeneratorSpec, generate_instance
from evcmab.road_graph import ChargerSpec, RoadEdge, RoadGraph, RoadNode, load_instance


def random_geometric_graph(seed: int, n: int = 200, radius_deg: float = 0.12, charger_p: float = 0.0,
                           directed_drop: float = 0.0) -> RoadGraph:
    """Small random road graph for property tests (not necessarily connected)."""
    rng = np.random.default_rng(seed)
    lat = 50 + rng.random(n)
    lon = 10 + rng.random(n)
    nodes = {}
    for i in range(n):
        charger = None
        if rng.random() < charger_p:
            p = float(rng.choice([50_000.0, 150_000.0, 350_000.0]))
            charger = ChargerSpec(p, p / 2)
        nodes[i] = RoadNode(i, float(lat[i]), float(lon[i]), charger)
    from evcmab.road_graph import haversine_m

    edges = []
    for i in range(n):
        for j in range(n):
            if i != j and abs(lat[i] - lat[j]) < radius_deg and abs(lon[i] - lon[j]) < radius_deg:
                if rng.random() < directed_drop:
                    continue
                d = haversine_m(lat[i], lon[i], lat[j], lon[j]) * (1 + 0.3 * rng.random())
                edges.append(RoadEdge(i, j, d, float(15 + 20 * rng.random())))
    return RoadGraph(nodes, edges)


def bellman_ford(adjacency, source, weights):
    dist = {u: math.inf for u in adjacency}
    dist[source] = 0.0
    for _ in range(len(adjacency)):
        changed = False
        for u, out in adjacency.items():
            if dist[u] == math.inf:
                continue
            for v, k in out:
                if dist[u] + weights[k] < dist[v]:
                    dist[v] = dist[u] + weights[k]
                    changed = True
        if not changed:
            break
    return dist


@pytest.fixture(scope="session")
def small_instance(tmp_path_factory):
    d = tmp_path_factory.mktemp("small")
    spec = GeneratorSpec(n_nodes=120, charger_fraction=0.1, extent_lat_deg=1.0, extent_lon_deg=1.5,
                         radius_m=20_000.0, seed=2)
    generate_instance(spec, d / "nodes.csv", d / "edges.csv")
    return load_instance(d / "nodes.csv", d / "edges.csv")


@pytest.fixture(scope="session")
def small_fg(small_instance):
    from evcmab.feasibility import build_feasibility_graph, connect_terminals
    from evcmab.road_graph import VehicleParams

    veh = VehicleParams()
    return connect_terminals(build_feasibility_graph(small_instance, veh), small_instance, 0, 1, veh)


def toy_fg(edges, chargers):
    """Hand-made feasibility graph; ``edges`` are (u, v, time_s, energy_Ws).

    Station ids: 0 is the source, 99 the target, chargers are given ids.
    """
    from evcmab.feasibility import FeasibilityEdge, FeasibilityGraph, Station

    stations = {0: Station(0, 57.0, 12.0, None), 99: Station(99, 57.0, 12.5, None)}
    for u, (pmax, pmin) in chargers.items():
        stations[u] = Station(u, 57.0, 12.0 + 0.004 * u, ChargerSpec(pmax, pmin))
    fes = [FeasibilityEdge(u, v, float(t), float(e)) for u, v, t, e in edges]
    return FeasibilityGraph(stations, fes, 1.75e8, 1000.0, 0, 99)
