"""Combinatorial semi-bandit policies over the feasibility graph.

Each iteration computes one queue-time and one charging-power estimate per
station (MAP for Greedy/Epsilon-Greedy, a posterior draw for Thompson
Sampling, a quantile bound for BayesUCB), turns them into edge weights,
and asks A* for the best source-target path.
"""

from __future__ import annotations

import enum
import math
from typing import Callable, Optional, Sequence

import numpy as np

from .feasibility import FeasibilityGraph
from .numerics import PURPOSE_EXPLORE, PURPOSE_POLICY, child_rng
from .posteriors import (
    MIN_DEFICIT_W,
    AlphaSampler,
    DegenerateMAP,
    PointMassCharge,
    PointMassQueue,
    Priors,
)
from .road_graph import Unreachable, a_star

__all__ = ["MismatchedFeedback", "Policy", "PolicyKind", "default_epsilon"]

MAX_EXPLORE_RESAMPLES = 16


class MismatchedFeedback(ValueError):
    pass


class PolicyKind(str, enum.Enum):
    GREEDY = "greedy"
    EPSILON_GREEDY = "epsilon_greedy"
    THOMPSON = "thompson"
    BAYES_UCB = "bayes_ucb"

    @property
    def stream_id(self) -> int:
        return list(PolicyKind).index(self)

    @classmethod
    def parse(cls, name: str) -> "PolicyKind":
        aliases = {"gr": "greedy", "e-gr": "epsilon_greedy", "egr": "epsilon_greedy",
                   "ts": "thompson", "b-ucb": "bayes_ucb", "bucb": "bayes_ucb", "ucb": "bayes_ucb"}
        key = name.strip().lower().replace(" ", "_")
        return cls(aliases.get(key, key))


def default_epsilon(t: int) -> float:
    return 1.0 / math.sqrt(t)


class Policy:
    """Posterior state and decision rule for one run.

    ``queue`` and ``charge`` map each charger id to its posterior.  The
    iteration counter ``t`` starts at 1 and advances in :meth:`observe`.
    """

    def __init__(
        self,
        kind: PolicyKind | str,
        fg: FeasibilityGraph,
        priors: Priors = Priors(),
        seed: int = 0,
        epsilon: Callable[[int], float] = default_epsilon,
    ):
        self.kind = PolicyKind.parse(kind) if isinstance(kind, str) else kind
        if fg.source is None or fg.target is None:
            raise ValueError("feasibility graph has no trip terminals; call connect_terminals first")
        self.fg = fg
        self.epsilon = epsilon
        self.t = 1
        self.queue = {u: priors.queue() for u in fg.chargers}
        self.charge = {u: priors.charge() for u in fg.chargers}
        self.samplers = {u: AlphaSampler() for u in fg.chargers}
        sid = self.kind.stream_id
        self._rngs = {u: child_rng(seed, PURPOSE_POLICY, sid, u) for u in fg.chargers}
        self._explore_rng = child_rng(seed, PURPOSE_EXPLORE, sid)
        self._heuristic_to_target = fg.heuristic_to(fg.target)
        self.n_explorations = 0
        self.last_explored = False

    @classmethod
    def point_mass(cls, kind, fg: FeasibilityGraph, truth, seed: int = 0, **kw) -> "Policy":
        """Policy whose posteriors are point masses at ``truth``."""
        p = cls(kind, fg, Priors(kappa=truth.kappa), seed, **kw)
        for u, s in truth.stations.items():
            p.queue[u] = PointMassQueue(s.lambda_queue)
            p.charge[u] = PointMassCharge(s.alpha_charge, s.beta_charge, truth.kappa)
        return p

    @property
    def fallback_stations(self) -> dict[int, bool]:
        return {u: s.failed for u, s in self.samplers.items()}

    def station_estimates(self) -> dict[int, tuple[float, float]]:
        """``(queue time, charging power)`` per charger for this iteration."""
        out = {}
        kind, t = self.kind, self.t
        for u in self.fg.chargers:
            ch = self.fg.stations[u].charger
            q, c = self.queue[u], self.charge[u]
            if kind is PolicyKind.THOMPSON:
                rng = self._rngs[u]
                tq = q.sample_expected_time(rng)
                estimate = lambda: c.sample_expected_power(rng, ch.max_power_W, ch.min_power_W, self.samplers[u])
            elif kind is PolicyKind.BAYES_UCB:
                tq = q.ucb_expected_time(t)
                estimate = lambda: c.ucb_expected_power(t, ch.max_power_W, ch.min_power_W)
            else:
                tq = q.map_expected_time()
                estimate = lambda: c.map_expected_power(ch.max_power_W, ch.min_power_W)
            try:
                rho = estimate()
            except DegenerateMAP:
                # xi * alpha <= 1: the conditional mode of the rate is 0, the
                # deficit estimate is unbounded and the clamp gives min power
                rho = ch.min_power_W
            out[u] = (tq, rho)
        return out

    def estimate_weights(self) -> list[float]:
        """Estimated traversal time of every feasibility edge, in edge order."""
        est = self.station_estimates()
        fg = self.fg
        weights = []
        for e in fg.edges:
            if fg.charges_at(e):
                tq, rho = est[e.target]
                weights.append(e.path_time_s + tq + e.path_energy_Ws / rho)
            else:
                weights.append(e.path_time_s)
        return weights

    def _route(self, weights, a, b) -> list[int]:
        h = self._heuristic_to_target if b == self.fg.target else self.fg.heuristic_to(b)
        return a_star(self.fg.adjacency, a, b, weights, h)[1]

    def select_path(self, weights: Optional[Sequence[float]] = None) -> list[int]:
        """Edge keys of the path to travel in the current iteration."""
        if weights is None:
            weights = self.estimate_weights()
        src, trg = self.fg.source, self.fg.target
        self.last_explored = False
        if self.kind is PolicyKind.EPSILON_GREEDY:
            rng = self._explore_rng
            if rng.random() < self.epsilon(self.t):
                chargers = self.fg.chargers
                for _ in range(MAX_EXPLORE_RESAMPLES):
                    mid = chargers[int(rng.integers(len(chargers)))]
                    try:
                        first = self._route(weights, src, mid)
                        second = self._route(weights, mid, trg)
                    except Unreachable:
                        continue
                    self.n_explorations += 1
                    self.last_explored = True
                    return first + second
        return self._route(weights, src, trg)

    def observe(self, path: Sequence[int], feedback: Sequence[tuple[float, float]]) -> None:
        """Update the heads of the travelled edges and advance ``t``.

        ``feedback[i]`` is ``(queue_s, charge_s)`` for ``path[i]``.  Power is
        recovered as energy / charge time and the deficit is floored at a
        tiny positive value so its logarithm stays finite.
        """
        if len(path) != len(feedback):
            raise MismatchedFeedback(f"{len(feedback)} feedback entries for {len(path)} edges")
        fg = self.fg
        for k, (queue_s, charge_s) in zip(path, feedback):
            e = fg.edges[k]
            if not fg.charges_at(e):
                continue
            u = e.target
            ch = fg.stations[u].charger
            power = e.path_energy_Ws / charge_s
            deficit = max(ch.max_power_W - power, MIN_DEFICIT_W)
            self.queue[u] = self.queue[u].update(queue_s)
            self.charge[u] = self.charge[u].update(deficit)
        self.t += 1
