"""Conjugate posteriors for station queue time and charging power.

Queue times are exponential with a Gamma(alpha, beta) posterior on the rate.
The charging-power deficit ``max_power - power``, divided by the scale
``kappa``, is gamma distributed with unknown shape and rate under a
Gamcon-II posterior ``(ln_pi, gamma_p, xi)``; only the shape marginal's
unnormalised log density is available, and it is log-concave.
"""

from __future__ import annotations

import csv
import functools
import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np
from scipy import optimize

from .numerics import SamplerFailure, TdrSampler, digamma, gamma_quantile, log_gamma, sample_gamma

log = logging.getLogger(__name__)

__all__ = [
    "AlphaSampler",
    "ChargePosterior",
    "DegenerateMAP",
    "NoInteriorMode",
    "PointMassCharge",
    "PointMassQueue",
    "Priors",
    "QueuePosterior",
    "ZeroDeficit",
    "charge_log_density_alpha",
    "charge_map_expected_power",
    "charge_mode_alpha",
    "charge_sample_expected_power",
    "charge_ucb_expected_power",
    "charge_update",
    "queue_map_expected_time",
    "queue_sample_expected_time",
    "queue_ucb_expected_time",
    "queue_update",
    "ucb_level",
]

DEFAULT_KAPPA = 300.0
MIN_DEFICIT_W = 1e-9


class DegenerateMAP(ValueError):
    pass


class NoInteriorMode(ValueError):
    pass


class ZeroDeficit(ValueError):
    pass


def ucb_level(t: int) -> float:
    """Quantile level 1 - 1/t, with 0.5 at t = 1."""
    if t < 1:
        raise ValueError(f"iteration must be >= 1, got {t}")
    return 0.5 if t == 1 else 1.0 - 1.0 / t


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


@dataclass(frozen=True)
class QueuePosterior:
    alpha: float = 2.0
    beta: float = 2400.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"queue posterior needs alpha, beta > 0, got {self.alpha}, {self.beta}")

    def update(self, observed_queue_s: float) -> "QueuePosterior":
        if observed_queue_s < 0:
            raise ValueError("queue observations must be nonnegative")
        return QueuePosterior(self.alpha + 1.0, self.beta + observed_queue_s)

    def update_batch(self, observations: Iterable[float]) -> "QueuePosterior":
        obs = list(observations)
        if any(y < 0 for y in obs):
            raise ValueError("queue observations must be nonnegative")
        beta = self.beta
        for y in obs:
            beta += y
        return QueuePosterior(self.alpha + len(obs), beta)

    def map_expected_time(self) -> float:
        if self.alpha <= 1:
            raise DegenerateMAP(f"MAP queue time needs alpha > 1, got {self.alpha}")
        return self.beta / (self.alpha - 1.0)

    def sample_expected_time(self, rng: np.random.Generator) -> float:
        return 1.0 / sample_gamma(rng, self.alpha, self.beta)

    def ucb_expected_time(self, t: int) -> float:
        return 1.0 / gamma_quantile(ucb_level(t), self.alpha, self.beta)


@dataclass(frozen=True)
class PointMassQueue:
    """Known queue rate; every query returns ``1 / rate``."""

    rate: float

    def update(self, observed_queue_s: float) -> "PointMassQueue":
        return self

    def map_expected_time(self) -> float:
        return 1.0 / self.rate

    def sample_expected_time(self, rng) -> float:
        return 1.0 / self.rate

    def ucb_expected_time(self, t: int) -> float:
        return 1.0 / self.rate


@functools.lru_cache(maxsize=65536)
def _mode_alpha(ln_pi: float, gamma_p: float, xi: float) -> float:
    c = ln_pi - xi * math.log(gamma_p)

    def g(a: float) -> float:
        return c - xi * digamma(a) + xi * digamma(xi * a)

    lo, hi = 1e-8, 1e8
    g_lo, g_hi = g(lo), g(hi)
    if not (g_lo > 0 > g_hi):
        raise NoInteriorMode(
            f"mode equation has no sign change on ({lo}, {hi}): g={g_lo:.3g}, {g_hi:.3g}"
        )
    # Narrow the bracket geometrically before the root finder.
    while hi / lo > 4.0:
        mid = math.sqrt(lo * hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    return optimize.brentq(g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


@dataclass(frozen=True)
class ChargePosterior:
    """Gamcon-II posterior over the (scaled) deficit's shape and rate.

    ``ln_pi`` holds log(pi) since pi itself overflows after a few dozen
    updates.  Observations are divided by ``kappa`` before updating and
    estimates multiply back by it.
    """

    ln_pi: float = 13.5
    gamma_p: float = 300.0
    xi: float = 3.0
    kappa: float = DEFAULT_KAPPA

    def __post_init__(self):
        if not (self.gamma_p > 0 and self.xi > 0 and self.kappa >= 0):
            raise ValueError("charge posterior needs gamma_p > 0, xi > 0, kappa >= 0")

    @property
    def integrable(self) -> bool:
        """Large-shape tail condition pi**(1/xi) * xi / gamma_p < 1."""
        return self.ln_pi / self.xi + math.log(self.xi) < math.log(self.gamma_p)

    def check_prior(self) -> None:
        if not self.integrable:
            raise ValueError(
                "charge prior is improper: need ln_pi/xi + ln(xi) < ln(gamma_p), got "
                f"{self.ln_pi / self.xi + math.log(self.xi):.4g} >= {math.log(self.gamma_p):.4g}"
            )
        if self.ln_pi / self.xi >= 0:
            log.warning(
                "charge prior has pi**(1/xi) >= 1 (ln_pi=%g, xi=%g); accepted because the "
                "shape tail condition pi**(1/xi) * xi / gamma_p < 1 holds",
                self.ln_pi, self.xi,
            )

    def update(self, deficit_W: float) -> "ChargePosterior":
        if not deficit_W > 0:
            raise ZeroDeficit(f"deficit must be positive, got {deficit_W!r}")
        if self.kappa <= 0:
            raise ValueError("cannot update with kappa = 0")
        x = deficit_W / self.kappa
        return replace(self, ln_pi=self.ln_pi + math.log(x), gamma_p=self.gamma_p + x, xi=self.xi + 1.0)

    def update_batch(self, deficits_W: Iterable[float]) -> "ChargePosterior":
        c = self
        for d in deficits_W:
            c = c.update(d)
        return c

    def log_density_alpha(self, alpha: float) -> float:
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha!r}")
        return (
            alpha * self.ln_pi
            - self.xi * alpha * math.log(self.gamma_p)
            - self.xi * log_gamma(alpha)
            + log_gamma(self.xi * alpha)
        )

    def dlog_density_alpha(self, alpha: float) -> float:
        return (
            self.ln_pi
            - self.xi * math.log(self.gamma_p)
            - self.xi * digamma(alpha)
            + self.xi * digamma(self.xi * alpha)
        )

    def mode_alpha(self) -> float:
        return _mode_alpha(self.ln_pi, self.gamma_p, self.xi)

    def _power(self, alpha: float, beta: float, max_power_W: float, min_power_W: Optional[float]) -> float:
        lo = max_power_W / 2.0 if min_power_W is None else min_power_W
        return _clamp(max_power_W - self.kappa * alpha / beta, lo, max_power_W)

    def map_expected_power(self, max_power_W: float, min_power_W: Optional[float] = None) -> float:
        a = self.mode_alpha()
        if self.xi * a <= 1:
            raise DegenerateMAP(f"MAP rate needs xi * alpha > 1, got {self.xi * a}")
        b = (self.xi * a - 1.0) / self.gamma_p
        return self._power(a, b, max_power_W, min_power_W)

    def sample_expected_power(
        self,
        rng: np.random.Generator,
        max_power_W: float,
        min_power_W: Optional[float] = None,
        sampler: Optional["AlphaSampler"] = None,
    ) -> float:
        sampler = sampler if sampler is not None else AlphaSampler()
        if sampler.failed:
            return self.map_expected_power(max_power_W, min_power_W)
        try:
            a = sampler.draw(self, rng)
        except SamplerFailure as exc:
            log.info("alpha sampler failed (%s); using the mode for this station from now on", exc)
            sampler.failed = True
            return self.map_expected_power(max_power_W, min_power_W)
        b = sample_gamma(rng, self.xi * a, self.gamma_p)
        return self._power(a, b, max_power_W, min_power_W)

    def ucb_expected_power(self, t: int, max_power_W: float, min_power_W: Optional[float] = None) -> float:
        a = self.mode_alpha()
        b = gamma_quantile(ucb_level(t), self.xi * a, self.gamma_p)
        return self._power(a, b, max_power_W, min_power_W)


class AlphaSampler:
    """Per-station TDR envelope cache plus the sticky failure flag.

    The envelope is reused while the posterior is unchanged and rebuilt
    after an update; once sampling has failed the station stays on its
    mode for the rest of the run.
    """

    def __init__(self):
        self.failed = False
        self._key = None
        self._tdr: Optional[TdrSampler] = None

    def draw(self, c: ChargePosterior, rng: np.random.Generator) -> float:
        key = (c.ln_pi, c.gamma_p, c.xi)
        if key != self._key:
            self._tdr = None
            self._key = key
            try:
                mode = c.mode_alpha()
            except NoInteriorMode as exc:
                raise SamplerFailure(str(exc)) from exc
            self._tdr = TdrSampler(c.log_density_alpha, mode, c.dlog_density_alpha)
        if self._tdr is None:
            raise SamplerFailure("envelope construction failed earlier for this posterior")
        return self._tdr.sample(rng)


@dataclass(frozen=True)
class PointMassCharge:
    """Known deficit shape/rate; every query returns the clamped mean power."""

    alpha: float
    beta: float
    kappa: float = DEFAULT_KAPPA

    def update(self, deficit_W: float) -> "PointMassCharge":
        return self

    def _mean(self, max_power_W, min_power_W):
        lo = max_power_W / 2.0 if min_power_W is None else min_power_W
        return _clamp(max_power_W - self.kappa * self.alpha / self.beta, lo, max_power_W)

    def map_expected_power(self, max_power_W, min_power_W=None):
        return self._mean(max_power_W, min_power_W)

    def sample_expected_power(self, rng, max_power_W, min_power_W=None, sampler=None):
        return self._mean(max_power_W, min_power_W)

    def ucb_expected_power(self, t, max_power_W, min_power_W=None):
        return self._mean(max_power_W, min_power_W)


# Functional aliases.

def queue_update(q: QueuePosterior, observed_queue_s: float) -> QueuePosterior:
    return q.update(observed_queue_s)


def queue_map_expected_time(q: QueuePosterior) -> float:
    return q.map_expected_time()


def queue_sample_expected_time(q: QueuePosterior, rng) -> float:
    return q.sample_expected_time(rng)


def queue_ucb_expected_time(q: QueuePosterior, t: int) -> float:
    return q.ucb_expected_time(t)


def charge_update(c: ChargePosterior, deficit_W: float) -> ChargePosterior:
    return c.update(deficit_W)


def charge_log_density_alpha(c: ChargePosterior, alpha: float) -> float:
    return c.log_density_alpha(alpha)


def charge_mode_alpha(c: ChargePosterior) -> float:
    return c.mode_alpha()


def charge_map_expected_power(c, max_power_W, min_power_W=None) -> float:
    return c.map_expected_power(max_power_W, min_power_W)


def charge_sample_expected_power(c, rng, max_power_W, min_power_W=None, sampler=None) -> float:
    return c.sample_expected_power(rng, max_power_W, min_power_W, sampler)


def charge_ucb_expected_power(c, t, max_power_W, min_power_W=None) -> float:
    return c.ucb_expected_power(t, max_power_W, min_power_W)


SNAPSHOT_FIELDS = ["station", "alpha_queue", "beta_queue", "ln_pi", "gamma", "xi", "fallback"]


def write_snapshot(path, queue: dict, charge: dict, fallback: dict) -> None:
    """Posterior state per station, floats in shortest round-trip form."""
    from .road_graph import _atomic_write_rows

    rows = []
    for u in sorted(queue):
        q, c = queue[u], charge[u]
        if isinstance(q, PointMassQueue) or isinstance(c, PointMassCharge):
            continue
        rows.append([u, repr(q.alpha), repr(q.beta), repr(c.ln_pi), repr(c.gamma_p), repr(c.xi),
                     int(bool(fallback.get(u, False)))])
    _atomic_write_rows(path, SNAPSHOT_FIELDS, rows)


def read_snapshot(path, kappa: float = DEFAULT_KAPPA):
    queue, charge, fallback = {}, {}, {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            u = int(row["station"])
            queue[u] = QueuePosterior(float(row["alpha_queue"]), float(row["beta_queue"]))
            charge[u] = ChargePosterior(float(row["ln_pi"]), float(row["gamma"]), float(row["xi"]), kappa)
            fallback[u] = row["fallback"] == "1"
    return queue, charge, fallback



@dataclass(frozen=True)
class Priors:
    """Prior hyperparameters shared by every station (experiment defaults)."""

    alpha_queue: float = 2.0
    beta_queue: float = 2400.0
    ln_pi: float = 13.5
    gamma: float = 300.0
    xi: float = 3.0
    kappa: float = DEFAULT_KAPPA

    def queue(self) -> QueuePosterior:
        return QueuePosterior(self.alpha_queue, self.beta_queue)

    def charge(self) -> ChargePosterior:
        return ChargePosterior(self.ln_pi, self.gamma, self.xi, self.kappa)
