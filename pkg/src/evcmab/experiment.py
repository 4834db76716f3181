"""Synthetic instances, multi-seed experiment runs and regret reports."""

from __future__ import annotations

import configparser
import csv
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .bandit import Policy, PolicyKind
from .environment import (
    RegretTrace,
    draw_truth,
    optimal_expected_path,
    regret_step,
    sample_feedback,
)
from .feasibility import (
    FeasibilityGraph,
    build_feasibility_graph,
    connect_terminals,
    load_feasibility_graph,
    save_feasibility_graph,
)
from .numerics import PURPOSE_FEEDBACK, PURPOSE_TRUTH, child_rng
from .posteriors import Priors, write_snapshot
from .road_graph import (
    EARTH_RADIUS_M,
    RoadGraph,
    VehicleParams,
    _atomic_write_rows,
    a_star,
    load_instance,
)

log = logging.getLogger(__name__)

__all__ = [
    "EmptyInput",
    "ExperimentConfig",
    "GenerationFailure",
    "GeneratorSpec",
    "generate_instance",
    "load_config",
    "prepare_trip",
    "report",
    "run_experiment",
    "run_single",
]

MAX_GENERATION_RETRIES = 32
POLICY_ORDER = [k.value for k in PolicyKind]
POLICY_COLORS = {
    "greedy": "#d62728",
    "epsilon_greedy": "#ff7f0e",
    "thompson": "#1f77b4",
    "bayes_ucb": "#2ca02c",
}
POLICY_LABELS = {"greedy": "GR", "epsilon_greedy": "E-GR", "thompson": "TS", "bayes_ucb": "B-UCB"}


class GenerationFailure(RuntimeError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    """Random geometric road network.

    Node 0 sits at the south-west corner of the extent and node 1 at the
    north-east corner; they are the default trip terminals.
    """

    n_nodes: int = 300
    charger_fraction: float = 0.2
    origin_lat: float = 57.0
    origin_lon: float = 12.0
    extent_lat_deg: float = 1.5
    extent_lon_deg: float = 2.5
    radius_m: float = 18_000.0
    speed_min_mps: float = 15.0
    speed_max_mps: float = 30.0
    detour_min: float = 1.0
    detour_max: float = 1.3
    max_powers_w: tuple[float, ...] = (50_000.0, 150_000.0, 350_000.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("need at least two nodes")
        if not 0 <= self.charger_fraction <= 1:
            raise ValueError("charger_fraction must lie in [0, 1]")
        if not 0 < self.speed_min_mps <= self.speed_max_mps:
            raise ValueError("speed range must be positive and ordered")
        if not 1.0 <= self.detour_min <= self.detour_max:
            raise ValueError("detour factors must satisfy 1 <= min <= max")
        if not self.max_powers_w:
            raise ValueError("max_powers_w must not be empty")


def _pairwise_haversine(lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    p = np.radians(lat)[:, None]
    q = np.radians(lat)[None, :]
    dl = np.radians(lon)[None, :] - np.radians(lon)[:, None]
    a = np.sin((q - p) / 2) ** 2 + np.cos(p) * np.cos(q) * np.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(a)))


def _connected(n: int, pairs: Sequence[tuple[int, int]]) -> bool:
    adj = [[] for _ in range(n)]
    for i, j in pairs:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == n


def generate_instance(spec: GeneratorSpec, nodes_file, edges_file) -> None:
    """Write a connected random geometric road network as CSV.

    Edge lengths are the great-circle distance times a detour factor >= 1,
    so the beeline heuristic stays admissible.  Both directions share the
    length but draw their own speed.
    """
    from .road_graph import EDGE_FIELDS, NODE_FIELDS

    for attempt in range(MAX_GENERATION_RETRIES):
        rng = child_rng(spec.seed, attempt)
        n = spec.n_nodes
        lat = spec.origin_lat + rng.random(n) * spec.extent_lat_deg
        lon = spec.origin_lon + rng.random(n) * spec.extent_lon_deg
        lat[0], lon[0] = spec.origin_lat, spec.origin_lon
        lat[1], lon[1] = spec.origin_lat + spec.extent_lat_deg, spec.origin_lon + spec.extent_lon_deg
        dist = _pairwise_haversine(lat, lon)
        iu, ju = np.nonzero(np.triu(dist <= spec.radius_m, k=1))
        pairs = list(zip(iu.tolist(), ju.tolist()))
        if _connected(n, pairs):
            break
    else:
        raise GenerationFailure(f"no connected instance after {MAX_GENERATION_RETRIES} attempts")

    n_chargers = int(round(spec.charger_fraction * n))
    charger_ids = set(rng.choice(n, size=n_chargers, replace=False).tolist())
    powers = rng.choice(np.asarray(spec.max_powers_w, dtype=float), size=n)
    node_rows = []
    for i in range(n):
        if i in charger_ids:
            node_rows.append([i, repr(float(lat[i])), repr(float(lon[i])),
                              repr(float(powers[i])), repr(float(powers[i]) / 2)])
        else:
            node_rows.append([i, repr(float(lat[i])), repr(float(lon[i])), "", ""])
    edge_rows = []
    detour = spec.detour_min + rng.random(len(pairs)) * (spec.detour_max - spec.detour_min)
    speeds = spec.speed_min_mps + rng.random((len(pairs), 2)) * (spec.speed_max_mps - spec.speed_min_mps)
    for k, (i, j) in enumerate(pairs):
        length = float(dist[i, j] * detour[k])
        if not length > 0:
            continue
        edge_rows.append([i, j, repr(length), repr(float(speeds[k, 0]))])
        edge_rows.append([j, i, repr(length), repr(float(speeds[k, 1]))])
    Path(nodes_file).parent.mkdir(parents=True, exist_ok=True)
    Path(edges_file).parent.mkdir(parents=True, exist_ok=True)
    _atomic_write_rows(nodes_file, NODE_FIELDS, node_rows)
    _atomic_write_rows(edges_file, EDGE_FIELDS, edge_rows)


@dataclass
class ExperimentConfig:
    out_dir: Path
    nodes_file: Optional[Path] = None
    edges_file: Optional[Path] = None
    generator: Optional[GeneratorSpec] = None
    source: int = 0
    target: int = 1
    horizon: int = 1000
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    policies: list[PolicyKind] = field(default_factory=lambda: list(PolicyKind))
    priors: Priors = Priors()
    vehicle: VehicleParams = VehicleParams()
    clamp_expected_power: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.policies:
            raise ValueError("at least one policy is required")
        if (self.nodes_file is None) != (self.edges_file is None):
            raise ValueError("nodes and edges files must be given together")
        if self.nodes_file is None and self.generator is None:
            self.generator = GeneratorSpec()
        self.priors.charge().check_prior()

    @property
    def instance_files(self) -> tuple[Path, Path]:
        if self.nodes_file is not None:
            return self.nodes_file, self.edges_file
        return self.out_dir / "instance" / "nodes.csv", self.out_dir / "instance" / "edges.csv"


def _section(cp, name, cls, **convert):
    if not cp.has_section(name):
        return None
    # configparser lower-cases keys
    known = {f.name.lower(): f for f in fields(cls)}
    kwargs = {}
    for key, raw in cp.items(name):
        if key not in known:
            raise ValueError(f"unknown key [{name}] {key}")
        f = known[key]
        if f.name in convert:
            kwargs[f.name] = convert[f.name](raw)
        else:
            kwargs[f.name] = int(raw) if isinstance(f.default, int) and not isinstance(f.default, bool) else float(raw)
    return cls(**kwargs)


def _int_list(raw: str) -> list[int]:
    return [int(x) for x in raw.replace(" ", "").split(",") if x]


def load_config(path, out_dir=None) -> ExperimentConfig:
    """Read an INI experiment manifest.

    Relative instance paths resolve against the config file's directory.
    Sections: ``[experiment]``, ``[trip]``, ``[instance]`` or
    ``[generator]``, ``[priors]``, ``[vehicle]``.
    """
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not cp.read(path):
        raise FileNotFoundError(path)
    base = path.parent
    allowed = {"experiment", "trip", "instance", "generator", "priors", "vehicle"}
    extra = set(cp.sections()) - allowed
    if extra:
        raise ValueError(f"unknown config sections: {sorted(extra)}")

    exp = cp["experiment"] if cp.has_section("experiment") else {}
    out = Path(out_dir) if out_dir is not None else base / exp.get("out", "runs/default")
    kw = {"out_dir": out}
    if "horizon" in exp:
        kw["horizon"] = int(exp["horizon"])
    if "seeds" in exp:
        kw["seeds"] = _int_list(exp["seeds"])
    if "policies" in exp:
        kw["policies"] = [PolicyKind.parse(p) for p in exp["policies"].split(",") if p.strip()]
    if "clamp_expected_power" in exp:
        kw["clamp_expected_power"] = cp.getboolean("experiment", "clamp_expected_power")
    unknown = set(exp) - {"out", "horizon", "seeds", "policies", "clamp_expected_power"}
    if unknown:
        raise ValueError(f"unknown key(s) in [experiment]: {sorted(unknown)}")
    if cp.has_section("trip"):
        kw["source"] = cp.getint("trip", "source")
        kw["target"] = cp.getint("trip", "target")
    if cp.has_section("instance"):
        kw["nodes_file"] = base / cp.get("instance", "nodes")
        kw["edges_file"] = base / cp.get("instance", "edges")
    gen = _section(cp, "generator", GeneratorSpec,
                   max_powers_w=lambda s: tuple(float(x) for x in s.split(",") if x.strip()))
    if gen is not None:
        kw["generator"] = gen
    priors = _section(cp, "priors", Priors)
    if priors is not None:
        kw["priors"] = priors
    veh = _section(cp, "vehicle", VehicleParams)
    if veh is not None:
        kw["vehicle"] = veh
    return ExperimentConfig(**kw)


def prepare_road_graph(cfg: ExperimentConfig) -> RoadGraph:
    nodes, edges = cfg.instance_files
    if cfg.nodes_file is None:
        # deterministic and cheap; regenerating keeps files in step with the generator settings
        generate_instance(cfg.generator, nodes, edges)
    return load_instance(nodes, edges)


def _cache_key(cfg: ExperimentConfig) -> str:
    h = hashlib.sha256()
    for f in cfg.instance_files:
        h.update(Path(f).read_bytes())
    h.update(repr(asdict(cfg.vehicle)).encode())
    return h.hexdigest()


def prepare_feasibility(cfg: ExperimentConfig, road: RoadGraph) -> FeasibilityGraph:
    """Build the feasibility graph or reuse the cached one for the same inputs."""
    cache = cfg.out_dir / "feasibility"
    key_file = cache / "cache_key.txt"
    key = _cache_key(cfg)
    if key_file.exists() and key_file.read_text().strip() == key:
        log.info("reusing cached feasibility graph in %s", cache)
        return load_feasibility_graph(cache)
    fg = build_feasibility_graph(road, cfg.vehicle)
    save_feasibility_graph(fg, cache)
    key_file.write_text(key + "\n")
    return fg


def prepare_trip(cfg: ExperimentConfig, road: RoadGraph, fg: FeasibilityGraph) -> FeasibilityGraph:
    """Attach the configured terminals and check the target is reachable."""
    trip = connect_terminals(fg, road, cfg.source, cfg.target, cfg.vehicle)
    a_star(trip.adjacency, trip.source, trip.target, [e.path_time_s for e in trip.edges])
    return trip


def run_single(
    fg: FeasibilityGraph,
    truth,
    kind: PolicyKind,
    seed: int,
    horizon: int,
    priors: Priors = Priors(),
    policy: Optional[Policy] = None,
) -> tuple[RegretTrace, Policy]:
    """Play ``horizon`` iterations of one policy against a fixed truth."""
    policy = policy or Policy(kind, fg, priors, seed)
    feedback_rngs = {u: child_rng(seed, PURPOSE_FEEDBACK, u) for u in fg.chargers}
    _, best = optimal_expected_path(truth, fg)
    trace = RegretTrace(seed, policy.kind.value)
    for _ in range(horizon):
        path = policy.select_path()
        fb = []
        for k in path:
            e = fg.edges[k]
            rng = feedback_rngs.get(e.target)
            fb.append(sample_feedback(truth, fg, e, rng) if rng is not None else (0.0, 0.0))
        trace.append(path, regret_step(truth, fg, path, best))
        policy.observe(path, fb)
    return trace, policy


def run_experiment(cfg: ExperimentConfig) -> list[RegretTrace]:
    """Run every (seed, policy) pair; all policies of a seed share one truth."""
    road = prepare_road_graph(cfg)
    fg = prepare_trip(cfg, road, prepare_feasibility(cfg, road))
    trace_dir = cfg.out_dir / "traces"
    snap_dir = cfg.out_dir / "posteriors"
    trace_dir.mkdir(parents=True, exist_ok=True)
    snap_dir.mkdir(parents=True, exist_ok=True)
    traces = []
    for seed in cfg.seeds:
        truth = draw_truth(fg, cfg.priors, child_rng(seed, PURPOSE_TRUTH), cfg.clamp_expected_power)
        for kind in cfg.policies:
            trace, policy = run_single(fg, truth, kind, seed, cfg.horizon, cfg.priors)
            name = f"{kind.value}_seed{seed}.csv"
            trace.write_csv(trace_dir / f"trace_{name}")
            write_snapshot(snap_dir / f"posterior_{name}", policy.queue, policy.charge, policy.fallback_stations)
            log.info("seed %d %s: final regret %.4g s", seed, kind.value, trace.final)
            traces.append(trace)
    return traces


def _read_traces(trace_dir) -> dict[str, list[list[float]]]:
    by_policy: dict[str, list[list[float]]] = {}
    files = sorted(Path(trace_dir).glob("trace_*.csv"))
    for f in files:
        with open(f, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            continue
        by_policy.setdefault(rows[0]["policy"], []).append([float(r["cumulative_regret_s"]) for r in rows])
    if not by_policy:
        raise EmptyInput(f"no trace files in {trace_dir}")
    return by_policy


def _policy_sort_key(name: str):
    return (POLICY_ORDER.index(name) if name in POLICY_ORDER else len(POLICY_ORDER), name)


SUMMARY_FIELDS = ["policy", "runs", "mean_final_regret_s", "std_final_regret_s"]


def report(trace_dir, out_dir=None) -> list[dict]:
    """Summarise final cumulative regret per policy and draw the regret plot.

    The standard deviation is the population one (``ddof=0``), so a single
    trace reports 0.  Writes ``summary.csv`` and ``regret.svg``.
    """
    out = Path(out_dir) if out_dir is not None else Path(trace_dir).parent
    out.mkdir(parents=True, exist_ok=True)
    by_policy = _read_traces(trace_dir)
    summary = []
    curves = {}
    for name in sorted(by_policy, key=_policy_sort_key):
        runs = by_policy[name]
        finals = np.array([r[-1] for r in runs])
        summary.append({
            "policy": name,
            "runs": len(runs),
            "mean_final_regret_s": float(finals.mean()),
            "std_final_regret_s": float(finals.std()),
        })
        length = min(len(r) for r in runs)
        curves[name] = np.mean([r[:length] for r in runs], axis=0)
    _atomic_write_rows(
        out / "summary.csv",
        SUMMARY_FIELDS,
        ([s["policy"], s["runs"], repr(s["mean_final_regret_s"]), repr(s["std_final_regret_s"])] for s in summary),
    )
    tmp = out / "regret.svg.tmp"
    tmp.write_text(regret_svg(curves))
    tmp.replace(out / "regret.svg")
    return summary


def _nice_max(x: float) -> float:
    if x <= 0:
        return 1.0
    mag = 10 ** math.floor(math.log10(x))
    for m in (1, 2, 2.5, 5, 10):
        if m * mag >= x:
            return m * mag
    return 10 * mag


def regret_svg(curves: dict[str, np.ndarray], width: int = 800, height: int = 600) -> str:
    """Line chart of mean cumulative regret against iteration."""
    left, right, top, bottom = 90, 30, 40, 60
    pw, ph = width - left - right, height - top - bottom
    t_max = max((len(c) for c in curves.values()), default=1)
    y_max = _nice_max(max((float(c.max()) for c in curves.values() if len(c)), default=0.0))

    def sx(t):
        return left + pw * (t - 1) / max(t_max - 1, 1)

    def sy(y):
        return top + ph * (1 - y / y_max)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" '
        f'width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="22" text-anchor="middle" font-size="15">Mean cumulative regret</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for i in range(6):
        y = y_max * i / 5
        out.append(f'<line x1="{left - 5}" y1="{sy(y):.2f}" x2="{left}" y2="{sy(y):.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{sy(y) + 4:.2f}" text-anchor="end">{y:.3g}</text>')
        t = 1 + (t_max - 1) * i / 5
        out.append(f'<line x1="{sx(t):.2f}" y1="{top + ph}" x2="{sx(t):.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{top + ph + 20}" text-anchor="middle">{t:.0f}</text>')
    out.append(f'<text x="{left + pw / 2:.0f}" y="{height - 15}" text-anchor="middle">iteration t</text>')
    out.append(f'<text x="20" y="{top + ph / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 20 {top + ph / 2:.0f})">regret (s)</text>')
    for i, name in enumerate(sorted(curves, key=_policy_sort_key)):
        curve = curves[name]
        color = POLICY_COLORS.get(name, "#7f7f7f")
        pts = " ".join(f"{sx(t):.2f},{sy(float(y)):.2f}" for t, y in enumerate(curve, start=1))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = top + 15 + 18 * i
        out.append(f'<line x1="{left + 15}" y1="{ly}" x2="{left + 40}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + 46}" y="{ly + 4}">{POLICY_LABELS.get(name, name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
