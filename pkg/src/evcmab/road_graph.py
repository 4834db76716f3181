"""Road network representation, vehicle energy model and exact search."""

from __future__ import annotations

import csv
import heapq
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Optional, Sequence

__all__ = [
    "ChargerSpec",
    "ParseError",
    "RoadEdge",
    "RoadGraph",
    "RoadNode",
    "RoadPath",
    "Unreachable",
    "ValidationError",
    "VehicleParams",
    "a_star",
    "beeline_heuristic",
    "dijkstra",
    "edge_energy",
    "edge_travel_time",
    "haversine_m",
    "load_instance",
    "save_instance",
]

EARTH_RADIUS_M = 6_371_000.0
MIN_CHARGER_POWER_W = 10_000.0


class ParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class ValidationError(ValueError):
    pass


class Unreachable(LookupError):
    pass


@dataclass(frozen=True)
class ChargerSpec:
    max_power_W: float
    min_power_W: float

    def __post_init__(self):
        if not 0 < self.min_power_W <= self.max_power_W:
            raise ValidationError(
                f"charger powers must satisfy 0 < min <= max, got {self.min_power_W}, {self.max_power_W}"
            )


@dataclass(frozen=True)
class RoadNode:
    id: int
    lat: float
    lon: float
    charger: Optional[ChargerSpec] = None


@dataclass(frozen=True)
class RoadEdge:
    source: int
    target: int
    length_m: float
    speed_mps: float


@dataclass(frozen=True)
class VehicleParams:
    """Longitudinal dynamics and battery parameters.

    Defaults are the medium duty truck used in the experiments: 13.7 t,
    rolling resistance 0.0064, drag 0.7 over 8 m^2, perfect drivetrain, and
    a deliberately small 2.5e8 Ws battery used between 10 % and 80 % charge.
    """

    mass_kg: float = 13_700.0
    gravity_mps2: float = 9.81
    rolling_coeff: float = 0.0064
    drag_coeff: float = 0.7
    frontal_area_m2: float = 8.0
    air_density_kgm3: float = 1.2
    efficiency: float = 1.0
    battery_capacity_Ws: float = 2.5e8
    soc_min_frac: float = 0.1
    soc_max_frac: float = 0.8

    def __post_init__(self):
        positive = (
            self.mass_kg, self.gravity_mps2, self.rolling_coeff, self.drag_coeff,
            self.frontal_area_m2, self.air_density_kgm3, self.efficiency,
            self.battery_capacity_Ws,
        )
        if any(not v > 0 for v in positive):
            raise ValidationError("vehicle parameters must be positive")
        if not 0 <= self.soc_min_frac <= self.soc_max_frac <= 1:
            raise ValidationError("state-of-charge fractions must satisfy 0 <= min <= max <= 1")


@dataclass(frozen=True)
class RoadPath:
    edges: tuple[RoadEdge, ...]
    total_time_s: float
    total_energy_Ws: float

    @property
    def nodes(self) -> list[int]:
        if not self.edges:
            return []
        return [self.edges[0].source] + [e.target for e in self.edges]


def edge_energy(edge: RoadEdge, veh: VehicleParams) -> float:
    """Energy in Ws to traverse ``edge`` at its speed limit (no /3600)."""
    d, v = edge.length_m, edge.speed_mps
    rolling = veh.mass_kg * veh.gravity_mps2 * veh.rolling_coeff * d
    drag = 0.5 * veh.drag_coeff * veh.frontal_area_m2 * veh.air_density_kgm3 * d * v * v
    return (rolling + drag) / veh.efficiency


def edge_travel_time(edge: RoadEdge) -> float:
    return edge.length_m / edge.speed_mps


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def beeline_heuristic(a: RoadNode, b: RoadNode, v_max: float) -> float:
    return haversine_m(a.lat, a.lon, b.lat, b.lon) / v_max


@dataclass
class RoadGraph:
    """Directed road graph; treat as immutable once built."""

    nodes: dict[int, RoadNode]
    edges: list[RoadEdge]
    adjacency: dict[int, list[tuple[int, int]]] = field(init=False, repr=False)

    def __post_init__(self):
        self.adjacency = {u: [] for u in self.nodes}
        for k, e in enumerate(self.edges):
            self.adjacency[e.source].append((e.target, k))

    @property
    def stations(self) -> list[RoadNode]:
        return [n for n in sorted(self.nodes.values(), key=lambda n: n.id) if n.charger is not None]

    @property
    def v_max(self) -> float:
        return max(e.speed_mps for e in self.edges)

    def heuristic_speed(self) -> float:
        """Speed that makes ``beeline / speed`` admissible on this graph.

        This is the maximum edge speed, inflated when some edge is shorter
        than the great-circle distance between its endpoints.
        """
        ratio = 1.0
        for e in self.edges:
            a, b = self.nodes[e.source], self.nodes[e.target]
            bee = haversine_m(a.lat, a.lon, b.lat, b.lon)
            if bee > 0:
                ratio = min(ratio, e.length_m / bee)
        # Tiny margin so rounding in haversine never breaks admissibility.
        return self.v_max / ratio * (1.0 + 1e-9)

    def travel_times(self) -> list[float]:
        return [edge_travel_time(e) for e in self.edges]

    def energies(self, veh: VehicleParams) -> list[float]:
        return [edge_energy(e, veh) for e in self.edges]

    def reversed_adjacency(self) -> dict[int, list[tuple[int, int]]]:
        radj: dict[int, list[tuple[int, int]]] = {u: [] for u in self.nodes}
        for k, e in enumerate(self.edges):
            radj[e.target].append((e.source, k))
        return radj

    def path(self, edge_ids: Sequence[int], veh: VehicleParams) -> RoadPath:
        edges = tuple(self.edges[k] for k in edge_ids)
        for e1, e2 in zip(edges, edges[1:]):
            if e1.target != e2.source:
                raise ValidationError("edges are not contiguous")
        t = 0.0
        en = 0.0
        for e in edges:
            t += edge_travel_time(e)
            en += edge_energy(e, veh)
        return RoadPath(edges, t, en)


Adjacency = Mapping[Hashable, Sequence[tuple[Hashable, Hashable]]]


def dijkstra(adjacency: Adjacency, source, weights) -> tuple[dict, dict]:
    """Single-source shortest distances.

    ``adjacency`` maps node -> [(neighbour, edge_key)], ``weights`` is
    indexable by edge key.  Returns ``(dist, pred)`` where ``dist`` covers
    every node (``inf`` if unreachable) and ``pred`` maps reached nodes to
    ``(previous node, edge_key)``.  Ties pop in node order.
    """
    dist = {u: math.inf for u in adjacency}
    dist[source] = 0.0
    pred: dict = {}
    done = set()
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, k in adjacency[u]:
            w = weights[k]
            if w < 0:
                raise ValueError("dijkstra requires nonnegative weights")
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = (u, k)
                heapq.heappush(heap, (nd, v))
    return dist, pred


def a_star(
    adjacency: Adjacency,
    source,
    target,
    weights,
    heuristic: Callable[[Hashable], float] = lambda u: 0.0,
) -> tuple[float, list]:
    """Optimal ``source -> target`` path as ``(cost, [edge_key, ...])``.

    Closed nodes are reopened when a cheaper route appears, so the result
    is optimal for any admissible heuristic (consistency only saves work).
    """
    if source == target:
        return 0.0, []
    g = {source: 0.0}
    pred: dict = {}
    closed: dict = {}
    heap = [(heuristic(source), source)]
    while heap:
        f, u = heapq.heappop(heap)
        gu = g[u]
        if u in closed and closed[u] <= gu:
            continue
        if f > gu + heuristic(u):
            continue
        if u == target:
            keys = []
            while u != source:
                u, k = pred[u]
                keys.append(k)
            keys.reverse()
            return gu, keys
        closed[u] = gu
        for v, k in adjacency[u]:
            nd = gu + weights[k]
            if nd < g.get(v, math.inf):
                g[v] = nd
                pred[v] = (u, k)
                heapq.heappush(heap, (nd + heuristic(v), v))
    raise Unreachable(f"no path from {source!r} to {target!r}")


def path_from_pred(pred: Mapping, source, target) -> list:
    """Edge keys along the predecessor tree from ``source`` to ``target``."""
    keys = []
    u = target
    while u != source:
        if u not in pred:
            raise Unreachable(f"no path from {source!r} to {target!r}")
        u, k = pred[u]
        keys.append(k)
    keys.reverse()
    return keys


def _float(text: str, path, line: int, name: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(path, line, f"cannot parse {name}={text!r} as a number") from None


def _int(text: str, path, line: int, name: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(path, line, f"cannot parse {name}={text!r} as an integer") from None


NODE_FIELDS = ["id", "lat", "lon", "max_power_w", "min_power_w"]
EDGE_FIELDS = ["from", "to", "length_m", "speed_mps"]


def _read_rows(path, fields: list[str]) -> Iterable[tuple[int, dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != fields:
            raise ParseError(path, 1, f"expected header {','.join(fields)}, got {reader.fieldnames}")
        for row in reader:
            if None in row or any(v is None for v in row.values()):
                raise ParseError(path, reader.line_num, "wrong number of columns")
            yield reader.line_num, {k.strip(): v.strip() for k, v in row.items()}


def load_instance(nodes_file, edges_file, min_charger_power_W: float = MIN_CHARGER_POWER_W) -> RoadGraph:
    """Read and validate a road graph from the two CSV files.

    Chargers below ``min_charger_power_W`` are dropped (the node stays).
    An empty ``min_power_w`` means half the maximum.  Duplicate node ids
    are an error, except that repeated charger rows for the same id with
    identical coordinates collapse to the most powerful charger.
    """
    nodes: dict[int, RoadNode] = {}
    for line, row in _read_rows(nodes_file, NODE_FIELDS):
        nid = _int(row["id"], nodes_file, line, "id")
        lat = _float(row["lat"], nodes_file, line, "lat")
        lon = _float(row["lon"], nodes_file, line, "lon")
        if not (-90 <= lat <= 90 and -180 <= lon <= 180):
            raise ValidationError(f"node {nid}: coordinates out of range")
        charger = None
        if row["max_power_w"]:
            pmax = _float(row["max_power_w"], nodes_file, line, "max_power_w")
            pmin = _float(row["min_power_w"], nodes_file, line, "min_power_w") if row["min_power_w"] else pmax / 2
            if pmax >= min_charger_power_W:
                try:
                    charger = ChargerSpec(pmax, pmin)
                except ValidationError as exc:
                    raise ValidationError(f"node {nid}: {exc}") from None
        elif row["min_power_w"]:
            raise ParseError(nodes_file, line, "min_power_w given without max_power_w")
        if nid in nodes:
            old = nodes[nid]
            if (old.lat, old.lon) != (lat, lon) or old.charger is None and charger is None:
                raise ValidationError(f"duplicate node id {nid}")
            if old.charger is None or (charger is not None and charger.max_power_W > old.charger.max_power_W):
                nodes[nid] = RoadNode(nid, lat, lon, charger)
            continue
        nodes[nid] = RoadNode(nid, lat, lon, charger)

    edges: list[RoadEdge] = []
    for line, row in _read_rows(edges_file, EDGE_FIELDS):
        u = _int(row["from"], edges_file, line, "from")
        v = _int(row["to"], edges_file, line, "to")
        length = _float(row["length_m"], edges_file, line, "length_m")
        speed = _float(row["speed_mps"], edges_file, line, "speed_mps")
        for end in (u, v):
            if end not in nodes:
                raise ValidationError(f"edge on line {line} references unknown node {end}")
        if not (length > 0 and math.isfinite(length)):
            raise ValidationError(f"edge {u}->{v}: length must be positive, got {length}")
        if not (speed > 0 and math.isfinite(speed)):
            raise ValidationError(f"edge {u}->{v}: speed must be positive, got {speed}")
        edges.append(RoadEdge(u, v, length, speed))
    return RoadGraph(nodes, edges)


def _atomic_write_rows(path, header: list[str], rows: Iterable[Sequence]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_instance(graph: RoadGraph, nodes_file, edges_file) -> None:
    """Write the graph with shortest round-trip float formatting."""
    node_rows = []
    for n in sorted(graph.nodes.values(), key=lambda n: n.id):
        if n.charger is None:
            node_rows.append([n.id, _fmt(n.lat), _fmt(n.lon), "", ""])
        else:
            node_rows.append([n.id, _fmt(n.lat), _fmt(n.lon),
                              _fmt(n.charger.max_power_W), _fmt(n.charger.min_power_W)])
    _atomic_write_rows(nodes_file, NODE_FIELDS, node_rows)
    _atomic_write_rows(
        edges_file,
        EDGE_FIELDS,
        ([e.source, e.target, _fmt(e.length_m), _fmt(e.speed_mps)] for e in graph.edges),
    )
