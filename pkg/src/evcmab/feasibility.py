"""Charger-to-charger feasibility graph built from a road graph."""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .road_graph import (
    ChargerSpec,
    NODE_FIELDS,
    ParseError,
    RoadGraph,
    VehicleParams,
    ValidationError,
    _atomic_write_rows,
    _fmt,
    _read_rows,
    edge_energy,
    edge_travel_time,
    haversine_m,
)

__all__ = [
    "FeasibilityEdge",
    "FeasibilityGraph",
    "IsolatedTerminal",
    "Station",
    "build_feasibility_graph",
    "connect_terminals",
    "load_feasibility_graph",
    "save_feasibility_graph",
    "time_energy_tree",
    "usable_window",
]


class IsolatedTerminal(ValueError):
    pass


@dataclass(frozen=True)
class Station:
    id: int
    lat: float
    lon: float
    charger: Optional[ChargerSpec]  # None for trip terminals that are not chargers


@dataclass(frozen=True)
class FeasibilityEdge:
    source: int
    target: int
    path_time_s: float
    path_energy_Ws: float
    road_path: Optional[tuple[int, ...]] = None  # road edge indices, when retained


@dataclass
class FeasibilityGraph:
    stations: dict[int, Station]
    edges: list[FeasibilityEdge]
    usable_window_Ws: float
    heuristic_speed_mps: float
    source: Optional[int] = None
    target: Optional[int] = None
    adjacency: dict[int, list[tuple[int, int]]] = field(init=False, repr=False)

    def __post_init__(self):
        self.edges.sort(key=lambda e: (e.source, e.target))
        self.adjacency = {u: [] for u in sorted(self.stations)}
        for k, e in enumerate(self.edges):
            if e.source == e.target:
                raise ValidationError(f"self-loop at station {e.source}")
            if e.source not in self.stations or e.target not in self.stations:
                raise ValidationError(f"edge {e.source}->{e.target} has an endpoint outside the station set")
            self.adjacency[e.source].append((e.target, k))

    @property
    def chargers(self) -> list[int]:
        """Ids of stations that can charge (trip terminals excluded)."""
        return [u for u in sorted(self.stations) if self.stations[u].charger is not None]

    def edge_index(self) -> dict[tuple[int, int], int]:
        return {(e.source, e.target): k for k, e in enumerate(self.edges)}

    def heuristic_to(self, target: int):
        t = self.stations[target]
        v = self.heuristic_speed_mps
        cache: dict[int, float] = {}

        def h(u: int) -> float:
            if u not in cache:
                s = self.stations[u]
                cache[u] = haversine_m(s.lat, s.lon, t.lat, t.lon) / v
            return cache[u]

        return h

    def charges_at(self, edge: FeasibilityEdge) -> bool:
        """Whether queue and charging terms apply at the head of ``edge``."""
        return edge.target != self.target and self.stations[edge.target].charger is not None


def usable_window(veh: VehicleParams) -> float:
    return (veh.soc_max_frac - veh.soc_min_frac) * veh.battery_capacity_Ws


def time_energy_tree(adjacency, source, times, energies):
    """Dijkstra on (time, energy) labels compared lexicographically.

    Among time-optimal paths the least-energy one wins; remaining ties go
    to the lower node id via heap order.  Returns ``(labels, pred)``.
    """
    labels = {source: (0.0, 0.0)}
    pred: dict = {}
    done = set()
    heap = [(0.0, 0.0, source)]
    while heap:
        t, en, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, k in adjacency[u]:
            cand = (t + times[k], en + energies[k])
            if v not in labels or cand < labels[v]:
                labels[v] = cand
                pred[v] = (u, k)
                heapq.heappush(heap, (cand[0], cand[1], v))
    return labels, pred


def _station(node) -> Station:
    return Station(node.id, node.lat, node.lon, node.charger)


def _trace(pred, source, target) -> tuple[int, ...]:
    keys = []
    u = target
    while u != source:
        u, k = pred[u]
        keys.append(k)
    return tuple(reversed(keys))


def build_feasibility_graph(
    road: RoadGraph, veh: VehicleParams, keep_road_paths: bool = False
) -> FeasibilityGraph:
    """One time-optimal search per station, filtered by the battery window.

    A pair is dropped when its time-optimal road path needs more energy
    than the usable window, even if a slower, cheaper path would fit.
    """
    window = usable_window(veh)
    times = road.travel_times()
    energies = road.energies(veh)
    stations = {n.id: _station(n) for n in road.stations}
    edges: list[FeasibilityEdge] = []
    for u in sorted(stations):
        labels, pred = time_energy_tree(road.adjacency, u, times, energies)
        for v in sorted(stations):
            if v == u or v not in labels:
                continue
            t, en = labels[v]
            if en <= window:
                rp = _trace(pred, u, v) if keep_road_paths else None
                edges.append(FeasibilityEdge(u, v, t, en, rp))
    return FeasibilityGraph(stations, edges, window, road.heuristic_speed())


def connect_terminals(
    fg: FeasibilityGraph, road: RoadGraph, src: int, trg: int, veh: VehicleParams
) -> FeasibilityGraph:
    """Return a copy of ``fg`` with the trip source and target attached.

    The source departs fully charged, so only its outgoing edges are added.
    The target gets incoming edges only and loses any outgoing ones; no
    queueing or charging is counted on arrival there.
    """
    for node in (src, trg):
        if node not in road.nodes:
            raise ValidationError(f"terminal {node} is not a road node")
    if src == trg:
        raise ValidationError("source and target must differ")
    window = fg.usable_window_Ws
    times = road.travel_times()
    energies = road.energies(veh)
    stations = dict(fg.stations)
    stations.setdefault(src, _station(road.nodes[src]))
    stations.setdefault(trg, _station(road.nodes[trg]))
    existing = {(e.source, e.target): e for e in fg.edges if e.source != trg}

    if src not in fg.stations:
        labels, _ = time_energy_tree(road.adjacency, src, times, energies)
        for v in sorted(stations):
            if v != src and v in labels and labels[v][1] <= window:
                existing[(src, v)] = FeasibilityEdge(src, v, *labels[v])
    if trg not in fg.stations:
        # Reverse search accumulates from the target end; re-sum forward so
        # the totals match a forward computation bit for bit.
        radj = road.reversed_adjacency()
        labels, pred = time_energy_tree(radj, trg, times, energies)
        for u in sorted(stations):
            if u == trg or u not in labels:
                continue
            keys = []
            x = u
            while x != trg:
                x, k = pred[x]
                keys.append(k)
            t = en = 0.0
            for k in keys:
                t += times[k]
                en += energies[k]
            if en <= window:
                existing[(u, trg)] = FeasibilityEdge(u, trg, t, en)

    g = FeasibilityGraph(stations, list(existing.values()), window, fg.heuristic_speed_mps, src, trg)
    if not g.adjacency[src]:
        raise IsolatedTerminal(f"source {src} has no feasible outgoing edge")
    if not any(e.target == trg for e in g.edges):
        raise IsolatedTerminal(f"target {trg} has no feasible incoming edge")
    return g


STATION_FILE = "stations.csv"
EDGE_FILE = "feasibility_edges.csv"
META_FILE = "feasibility_meta.csv"
FEAS_EDGE_FIELDS = ["from", "to", "path_time_s", "path_energy_ws"]


def save_feasibility_graph(fg: FeasibilityGraph, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in (fg.stations[u] for u in sorted(fg.stations)):
        if s.charger is None:
            rows.append([s.id, _fmt(s.lat), _fmt(s.lon), "", ""])
        else:
            rows.append([s.id, _fmt(s.lat), _fmt(s.lon), _fmt(s.charger.max_power_W), _fmt(s.charger.min_power_W)])
    _atomic_write_rows(d / STATION_FILE, NODE_FIELDS, rows)
    _atomic_write_rows(
        d / EDGE_FILE,
        FEAS_EDGE_FIELDS,
        ([e.source, e.target, _fmt(e.path_time_s), _fmt(e.path_energy_Ws)] for e in fg.edges),
    )
    meta = [["usable_window_ws", _fmt(fg.usable_window_Ws)],
            ["heuristic_speed_mps", _fmt(fg.heuristic_speed_mps)]]
    _atomic_write_rows(d / META_FILE, ["key", "value"], meta)


def load_feasibility_graph(directory) -> FeasibilityGraph:
    d = Path(directory)
    stations: dict[int, Station] = {}
    for line, row in _read_rows(d / STATION_FILE, NODE_FIELDS):
        try:
            sid = int(row["id"])
            charger = None
            if row["max_power_w"]:
                charger = ChargerSpec(float(row["max_power_w"]), float(row["min_power_w"]))
            stations[sid] = Station(sid, float(row["lat"]), float(row["lon"]), charger)
        except ValueError as exc:
            raise ParseError(d / STATION_FILE, line, str(exc)) from None
    edges = []
    for line, row in _read_rows(d / EDGE_FILE, FEAS_EDGE_FIELDS):
        try:
            edges.append(FeasibilityEdge(int(row["from"]), int(row["to"]),
                                         float(row["path_time_s"]), float(row["path_energy_ws"])))
        except ValueError as exc:
            raise ParseError(d / EDGE_FILE, line, str(exc)) from None
    meta = {}
    with open(d / META_FILE, newline="") as fh:
        for row in csv.DictReader(fh):
            meta[row["key"]] = float(row["value"])
    return FeasibilityGraph(stations, edges, meta["usable_window_ws"], meta["heuristic_speed_mps"])


def with_window(fg: FeasibilityGraph, window: float) -> FeasibilityGraph:
    """Copy of ``fg`` keeping only edges within ``window`` (for tests and what-ifs)."""
    return replace(fg, edges=[e for e in fg.edges if e.path_energy_Ws <= window], usable_window_Ws=window)
