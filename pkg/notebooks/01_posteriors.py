"""
Station posteriors
==================

How one charging station's beliefs evolve: queue time under a gamma prior
on the exponential rate, charging power under the Gamcon-II prior on the
gamma-distributed power deficit.
"""

import numpy as np

from evcmab.numerics import TdrSampler, child_rng
from evcmab.posteriors import ChargePosterior, QueuePosterior

# %%
# Queue: Gamma(2, 2400) on the rate, i.e. a 40 minute prior guess.
q = QueuePosterior(2.0, 2400.0)
print("prior MAP queue time  %.0f s" % q.map_expected_time())

rng = child_rng(0)
waits = rng.exponential(300.0, size=20)  # this station is quicker than we think
for n in (1, 5, 20):
    qn = q.update_batch(waits[:n])
    print("after %2d visits       %.0f s   (UCB at t=100: %.0f s)"
          % (n, qn.map_expected_time(), qn.ucb_expected_time(100)))

# %%
# Charging: the shape marginal is only known up to a constant.  It is
# log-concave, so its mode is a one dimensional root and exact draws come
# from transformed density rejection.
c = ChargePosterior()  # ln pi = 13.5, gamma = 300, xi = 3, kappa = 300
print("\nshape mode           %.4f" % c.mode_alpha())
print("MAP power at 150 kW  %.0f W" % c.map_expected_power(150_000, 75_000))

sampler = TdrSampler(c.log_density_alpha, c.mode_alpha(), c.dlog_density_alpha)
draws = np.array([sampler.sample(rng) for _ in range(5000)])
print("shape draws          mean %.3f, 5-95%% [%.2f, %.2f], acceptance %.3f"
      % (draws.mean(), *np.quantile(draws, [0.05, 0.95]), sampler.acceptance_rate))

# %%
# Observed deficits (watts below the rated power) narrow the posterior.
deficits = np.maximum(150_000 - rng.normal(120_000, 8_000, size=50), 1.0)
for n in (1, 10, 50):
    cn = c.update_batch(deficits[:n])
    powers = [cn.sample_expected_power(rng, 150_000, 75_000) for _ in range(500)]
    print("after %2d charges     MAP %.0f W, Thompson spread %.0f W"
          % (n, cn.map_expected_power(150_000, 75_000), np.std(powers)))
