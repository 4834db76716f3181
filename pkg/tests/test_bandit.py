import math

import numpy as np
import pytest

from conftest import toy_fg
from evcmab.bandit import MismatchedFeedback, Policy, PolicyKind, default_epsilon
from evcmab.environment import StationTruth, TruthParams, draw_truth, edge_losses, optimal_expected_path
from evcmab.experiment import run_single
from evcmab.feasibility import FeasibilityGraph
from evcmab.numerics import SamplerFailure, child_rng
from evcmab.posteriors import ChargePosterior, Priors, QueuePosterior
from evcmab.road_graph import a_star

KINDS = list(PolicyKind)


def diamond_fg():
    # source 0 -> {5, 7} -> 99, plus 5 -> 7
    return toy_fg(
        [(0, 5, 3600, 1.8e8), (0, 7, 3000, 1.2e8), (5, 7, 500, 2e7), (5, 99, 1000, 5e7), (7, 99, 1500, 6e7)],
        {5: (150_000.0, 75_000.0), 7: (50_000.0, 25_000.0)},
    )


class TestKind:
    @pytest.mark.parametrize("name, kind", [("TS", PolicyKind.THOMPSON), ("e-gr", PolicyKind.EPSILON_GREEDY),
                                            ("B-UCB", PolicyKind.BAYES_UCB), ("greedy", PolicyKind.GREEDY)])
    def test_parse(self, name, kind):
        assert PolicyKind.parse(name) is kind

    def test_unknown(self):
        with pytest.raises(ValueError):
            PolicyKind.parse("softmax")

    def test_epsilon(self):
        assert default_epsilon(1) == 1.0
        assert default_epsilon(100) == 0.1


class TestWeights:
    def test_needs_terminals(self, small_fg):
        bare = FeasibilityGraph(small_fg.stations, list(small_fg.edges), 1.0, 1.0)
        with pytest.raises(ValueError):
            Policy("greedy", bare)

    def test_hand_arithmetic(self):
        fg = diamond_fg()
        p = Policy("greedy", fg)
        p.queue[5] = QueuePosterior(2.0, 600.0)  # MAP 600 s
        w = p.estimate_weights()
        rho = p.charge[5].map_expected_power(150_000, 75_000)
        k = fg.edge_index()[(0, 5)]
        assert w[k] == pytest.approx(3600 + 600 + 1.8e8 / rho)
        assert w[fg.edge_index()[(5, 99)]] == 1000  # no charging at the target

    def test_point_mass_weights_equal_expected_loss(self, small_fg):
        truth = draw_truth(small_fg, Priors(), child_rng(1, 1))
        for kind in KINDS:
            p = Policy.point_mass(kind, small_fg, truth)
            assert p.estimate_weights() == pytest.approx(edge_losses(truth, small_fg), rel=1e-12)

    def test_station_estimates_shared_across_edges(self, small_fg):
        a = Policy("thompson", small_fg, seed=4)
        b = Policy("thompson", small_fg, seed=4)
        est = a.station_estimates()
        w = b.estimate_weights()
        for k, e in enumerate(small_fg.edges):
            if small_fg.charges_at(e):
                tq, rho = est[e.target]
                assert w[k] == e.path_time_s + tq + e.path_energy_Ws / rho

    @pytest.mark.parametrize("kind", KINDS)
    def test_weights_positive_finite(self, small_fg, kind):
        w = Policy(kind, small_fg, seed=2).estimate_weights()
        assert all(math.isfinite(x) and x > 0 for x in w)

    def test_degenerate_map_uses_min_power(self):
        fg = diamond_fg()
        p = Policy("greedy", fg)
        p.charge[5] = ChargePosterior().update(1e-3)  # xi * mode < 1
        assert p.station_estimates()[5][1] == 75_000

    def test_thompson_falls_back_to_mode(self, monkeypatch):
        fg = diamond_fg()
        p = Policy("thompson", fg, seed=1)

        def boom(self, rng):
            raise SamplerFailure("forced")

        monkeypatch.setattr("evcmab.numerics.TdrSampler.sample", boom)
        est = p.station_estimates()
        assert p.fallback_stations == {5: True, 7: True}
        assert est[5][1] == p.charge[5].map_expected_power(150_000, 75_000)


class TestSelect:
    def test_greedy_is_a_star_on_map_weights(self, small_fg):
        p = Policy("greedy", small_fg)
        w = p.estimate_weights()
        path = p.select_path()
        assert sum(w[k] for k in path) == pytest.approx(a_star(small_fg.adjacency, 0, 1, w)[0], rel=1e-12)

    def test_path_is_contiguous(self, small_fg):
        for kind in KINDS:
            p = Policy(kind, small_fg, seed=3)
            for _ in range(5):
                path = p.select_path()
                nodes = [small_fg.edges[path[0]].source] + [small_fg.edges[k].target for k in path]
                assert nodes[0] == small_fg.source and nodes[-1] == small_fg.target
                assert all(small_fg.edges[a].target == small_fg.edges[b].source for a, b in zip(path, path[1:]))
                p.observe(path, [(100.0, 3000.0)] * len(path))

    def test_exploration_goes_through_random_charger(self):
        fg = diamond_fg()
        p = Policy("epsilon_greedy", fg, seed=0, epsilon=lambda t: 1.0)
        seen = set()
        for _ in range(40):
            path = p.select_path()
            assert p.last_explored
            seen.update(fg.edges[k].target for k in path)
        assert {5, 7} <= seen
        assert p.n_explorations == 40

    def test_first_iteration_always_explores(self, small_fg):
        for seed in range(10):
            p = Policy("epsilon_greedy", small_fg, seed=seed)
            p.select_path()
            assert p.last_explored

    def test_exploration_rate(self, small_fg):
        p = Policy("epsilon_greedy", small_fg, seed=5)
        weights = p.estimate_weights()
        T = 2000
        for t in range(1, T + 1):
            p.t = t
            p.select_path(weights)
        expected = sum(1 / math.sqrt(t) for t in range(1, T + 1))
        assert abs(p.n_explorations - expected) < 4 * math.sqrt(expected)

    def test_unreachable_random_charger_falls_back_to_greedy(self):
        # charger 5 has no incoming edge, so every exploration attempt fails
        fg = toy_fg([(0, 99, 1000, 1e7), (5, 99, 10, 1e6)], {5: (1e5, 5e4)})
        p = Policy("epsilon_greedy", fg, epsilon=lambda t: 1.0)
        assert p.select_path() == [0]
        assert not p.last_explored and p.n_explorations == 0

    def test_bayes_ucb_is_deterministic(self, small_fg):
        a = Policy("bayes_ucb", small_fg, seed=1)
        b = Policy("bayes_ucb", small_fg, seed=2)
        assert a.select_path() == b.select_path()


class TestObserve:
    def test_updates_heads(self):
        fg = diamond_fg()
        p = Policy("greedy", fg)
        path = [fg.edge_index()[(0, 5)], fg.edge_index()[(5, 99)]]
        p.observe(path, [(300.0, 1.8e8 / 120_000), (0.0, 0.0)])
        assert p.t == 2
        assert p.queue[5] == QueuePosterior(3.0, 2700.0)
        assert p.charge[5] == ChargePosterior().update(30_000.0)
        assert p.queue[7] == QueuePosterior() and p.charge[7] == ChargePosterior()

    def test_deficit_floor(self):
        fg = diamond_fg()
        p = Policy("greedy", fg)
        p.observe([fg.edge_index()[(0, 5)]], [(0.0, 1.8e8 / 150_000)])  # full power: deficit 0
        assert math.isfinite(p.charge[5].ln_pi)

    def test_mismatched(self):
        p = Policy("greedy", diamond_fg())
        with pytest.raises(MismatchedFeedback):
            p.observe([0, 3], [(1.0, 1.0)])


class TestRuns:
    @pytest.mark.parametrize("kind", KINDS)
    def test_point_mass_zero_regret_when_exploiting(self, small_fg, kind):
        for seed in range(3):
            truth = draw_truth(small_fg, Priors(), child_rng(seed, 1))
            policy = Policy.point_mass(kind, small_fg, truth, seed=seed)
            explored = []
            orig = policy.select_path

            def tracked(weights=None):
                path = orig(weights)
                explored.append(policy.last_explored)
                return path

            policy.select_path = tracked
            trace, _ = run_single(small_fg, truth, kind, seed, 100, policy=policy)
            exploit = [r for r, x in zip(trace.instant, explored) if not x]
            assert sum(exploit) < 1e-6
            if kind is not PolicyKind.EPSILON_GREEDY:
                assert trace.final < 1e-6

    def test_reproducible(self, small_fg):
        truth = draw_truth(small_fg, Priors(), child_rng(7, 1))
        for kind in KINDS:
            a, _ = run_single(small_fg, truth, kind, 7, 50)
            b, _ = run_single(small_fg, truth, kind, 7, 50)
            assert a.instant == b.instant and a.paths == b.paths

    def test_thompson_learns_on_two_routes(self):
        # route via 5 is clearly better in truth; the prior favours neither strongly
        fg = toy_fg([(0, 5, 3000, 1.2e8), (5, 99, 1000, 4e7), (0, 7, 3000, 1.2e8), (7, 99, 1000, 4e7)],
                    {5: (150_000.0, 75_000.0), 7: (150_000.0, 75_000.0)})
        truth = TruthParams({5: StationTruth(1 / 300, 2.0, 0.02), 7: StationTruth(1 / 4000, 2.0, 0.02)})
        keys, _ = optimal_expected_path(truth, fg)
        trace, _ = run_single(fg, truth, PolicyKind.THOMPSON, 0, 300)
        late = [p for p in trace.paths[-100:]]
        assert np.mean([list(p) == keys for p in late]) > 0.9
