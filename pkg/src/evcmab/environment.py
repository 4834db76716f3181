"""Ground-truth simulator: hidden station parameters, feedback and regret."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .feasibility import FeasibilityEdge, FeasibilityGraph
from .numerics import TdrSampler, sample_exponential, sample_gamma
from .posteriors import Priors
from .road_graph import _atomic_write_rows, a_star

__all__ = [
    "RegretTrace",
    "StationTruth",
    "TruthParams",
    "draw_truth",
    "expected_edge_loss",
    "optimal_expected_path",
    "path_expected_loss",
    "regret_step",
    "sample_feedback",
]

REGRET_FLOOR = 1e-9


@dataclass(frozen=True)
class StationTruth:
    lambda_queue: float
    alpha_charge: float
    beta_charge: float


@dataclass
class TruthParams:
    """Hidden per-station parameters.

    With ``clamp_power`` the expected power in the loss is clamped to the
    station's [min, max] range, matching the truncated feedback; without it
    the raw ``max - kappa * alpha / beta`` is used (infinite loss when that
    is not positive).
    """

    stations: dict[int, StationTruth]
    kappa: float = 300.0
    clamp_power: bool = True

    def mean_power(self, fg: FeasibilityGraph, u: int) -> float:
        ch = fg.stations[u].charger
        s = self.stations[u]
        raw = ch.max_power_W - self.kappa * s.alpha_charge / s.beta_charge
        if self.clamp_power:
            return min(max(raw, ch.min_power_W), ch.max_power_W)
        return raw


def draw_truth(fg: FeasibilityGraph, priors: Priors, rng: np.random.Generator, clamp_power: bool = True) -> TruthParams:
    """Draw every charger's parameters from the priors, in station-id order.

    Sampler failures propagate: a run cannot proceed on an inexact truth.
    """
    charge = priors.charge()
    tdr = TdrSampler(charge.log_density_alpha, charge.mode_alpha(), charge.dlog_density_alpha)
    out = {}
    for u in fg.chargers:
        lam = sample_gamma(rng, priors.alpha_queue, priors.beta_queue)
        a = tdr.sample(rng)
        b = sample_gamma(rng, priors.xi * a, priors.gamma)
        out[u] = StationTruth(lam, a, b)
    return TruthParams(out, priors.kappa, clamp_power)


def sample_feedback(
    truth: TruthParams, fg: FeasibilityGraph, edge: FeasibilityEdge, rng: np.random.Generator
) -> tuple[float, float]:
    """Stochastic ``(queue_s, charge_s)`` on arriving at ``edge.target``.

    Charging power is ``max(min_power, max_power - kappa * z)`` with
    ``z ~ Gamma(alpha, beta)``.  Arrival at the trip target yields (0, 0).
    """
    if not fg.charges_at(edge):
        return 0.0, 0.0
    s = truth.stations[edge.target]
    ch = fg.stations[edge.target].charger
    queue = sample_exponential(rng, s.lambda_queue)
    z = sample_gamma(rng, s.alpha_charge, s.beta_charge)
    power = max(ch.min_power_W, ch.max_power_W - truth.kappa * z)
    return queue, edge.path_energy_Ws / power


def expected_edge_loss(truth: TruthParams, fg: FeasibilityGraph, edge: FeasibilityEdge) -> float:
    if not fg.charges_at(edge):
        return edge.path_time_s
    u = edge.target
    power = truth.mean_power(fg, u)
    if power <= 0:
        return math.inf
    return edge.path_time_s + 1.0 / truth.stations[u].lambda_queue + edge.path_energy_Ws / power


def edge_losses(truth: TruthParams, fg: FeasibilityGraph) -> list[float]:
    return [expected_edge_loss(truth, fg, e) for e in fg.edges]


def path_expected_loss(truth: TruthParams, fg: FeasibilityGraph, edge_keys: Sequence[int]) -> float:
    total = 0.0
    for k in edge_keys:
        total += expected_edge_loss(truth, fg, fg.edges[k])
    return total


def optimal_expected_path(truth: TruthParams, fg: FeasibilityGraph, src=None, trg=None) -> tuple[list[int], float]:
    """Expected-loss-optimal path; raises ``Unreachable`` if none exists."""
    src = fg.source if src is None else src
    trg = fg.target if trg is None else trg
    _, keys = a_star(fg.adjacency, src, trg, edge_losses(truth, fg), fg.heuristic_to(trg))
    return keys, path_expected_loss(truth, fg, keys)


def regret_step(truth: TruthParams, fg: FeasibilityGraph, chosen: Sequence[int], optimal_loss: float) -> float:
    r = path_expected_loss(truth, fg, chosen) - optimal_loss
    if r < -REGRET_FLOOR * max(1.0, abs(optimal_loss)):
        raise ValueError(f"negative regret {r}: optimal loss is not optimal")
    return max(r, 0.0)


TRACE_FIELDS = ["seed", "policy", "t", "instant_regret_s", "cumulative_regret_s"]


@dataclass
class RegretTrace:
    seed: int
    policy: str
    paths: list[tuple[int, ...]] = field(default_factory=list)
    instant: list[float] = field(default_factory=list)
    cumulative: list[float] = field(default_factory=list)

    def append(self, path: Sequence[int], regret: float) -> None:
        self.paths.append(tuple(path))
        self.instant.append(regret)
        prev = self.cumulative[-1] if self.cumulative else 0.0
        self.cumulative.append(prev + regret)

    @property
    def final(self) -> float:
        return self.cumulative[-1] if self.cumulative else 0.0

    def write_csv(self, path) -> None:
        rows = (
            [self.seed, self.policy, t, repr(r), repr(c)]
            for t, (r, c) in enumerate(zip(self.instant, self.cumulative), start=1)
        )
        _atomic_write_rows(path, TRACE_FIELDS, rows)
