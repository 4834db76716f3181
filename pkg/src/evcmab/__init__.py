"""Combinatorial semi-bandits for charging-station selection on long EV trips."""

from .bandit import Policy, PolicyKind
from .environment import TruthParams, draw_truth, optimal_expected_path
from .experiment import ExperimentConfig, GeneratorSpec, load_config, report, run_experiment
from .feasibility import FeasibilityGraph, build_feasibility_graph, connect_terminals
from .posteriors import ChargePosterior, Priors, QueuePosterior
from .road_graph import RoadGraph, VehicleParams, load_instance

__version__ = "0.1.0"
