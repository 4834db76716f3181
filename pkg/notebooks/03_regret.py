"""
Regret of the four policies
===========================

All policies face the same hidden station parameters per seed.  Greedy
trusts its MAP estimates and tends to lock in early, while Thompson
sampling and BayesUCB keep finding better routes.
"""

import tempfile
from pathlib import Path

import numpy as np

from evcmab.bandit import PolicyKind
from evcmab.environment import draw_truth
from evcmab.experiment import (
    ExperimentConfig,
    prepare_feasibility,
    prepare_road_graph,
    prepare_trip,
    regret_svg,
    run_single,
)
from evcmab.numerics import PURPOSE_TRUTH, child_rng

out = Path(tempfile.mkdtemp())
cfg = ExperimentConfig(out_dir=out, horizon=400, seeds=[1, 2, 3])
road = prepare_road_graph(cfg)
fg = prepare_trip(cfg, road, prepare_feasibility(cfg, road))

# %%
curves = {}
for kind in PolicyKind:
    runs = []
    for seed in cfg.seeds:
        truth = draw_truth(fg, cfg.priors, child_rng(seed, PURPOSE_TRUTH))
        trace, _ = run_single(fg, truth, kind, seed, cfg.horizon, cfg.priors)
        runs.append(trace.cumulative)
    curves[kind.value] = np.mean(runs, axis=0)
    inst = np.diff(curves[kind.value], prepend=0.0)
    print("%-15s final regret %9.0f s   last-100 / first-100: %.2f"
          % (kind.value, curves[kind.value][-1], inst[-100:].mean() / inst[:100].mean()))

# %%
(out / "regret.svg").write_text(regret_svg(curves))
print("\nplot written to", out / "regret.svg")
