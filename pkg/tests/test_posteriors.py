import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from evcmab.numerics import SamplerFailure, child_rng, digamma
from evcmab.posteriors import (
    AlphaSampler,
    ChargePosterior,
    DegenerateMAP,
    NoInteriorMode,
    PointMassCharge,
    PointMassQueue,
    Priors,
    QueuePosterior,
    ZeroDeficit,
    charge_mode_alpha,
    queue_update,
    read_snapshot,
    ucb_level,
    write_snapshot,
)

PRIOR = ChargePosterior(13.5, 300.0, 3.0)


def joint_log(c: ChargePosterior, a, b):
    """Unnormalised Gamcon-II log density over (shape, rate) of the scaled deficit."""
    return a * c.ln_pi + (c.xi * a - 1) * np.log(b) - c.gamma_p * b - c.xi * special.gammaln(a)


def gamma_loglik(x, a, b):
    return a * np.log(b) + (a - 1) * math.log(x) - b * x - special.gammaln(a)


def grid_queue_moments(alpha, beta, ys):
    lam = np.linspace(1e-6, 1e-1, 100_000)
    logp = (alpha - 1) * np.log(lam) - beta * lam + len(ys) * np.log(lam) - lam * sum(ys)
    w = np.exp(logp - logp.max())
    w /= w.sum()
    mean = (w * lam).sum()
    return mean, (w * (lam - mean) ** 2).sum()


class TestQueue:
    @pytest.mark.parametrize("n", [1, 5, 50])
    def test_grid_bayes(self, n):
        ys = list(child_rng(40, n).exponential(600.0, size=n))
        q = QueuePosterior(2.0, 2400.0).update_batch(ys)
        mean, var = grid_queue_moments(2.0, 2400.0, ys)
        assert q.alpha / q.beta == pytest.approx(mean, rel=1e-3)
        assert q.alpha / q.beta**2 == pytest.approx(var, rel=1e-3)

    def test_update_values(self):
        assert queue_update(QueuePosterior(2, 2400), 600) == QueuePosterior(3, 3000)
        assert QueuePosterior(2, 2400).update(0.0) == QueuePosterior(3, 2400)
        with pytest.raises(ValueError):
            QueuePosterior(2, 2400).update(-1.0)

    def test_batch_equals_sequential(self):
        ys = [10.0, 250.5, 3.25, 999.0]
        q = QueuePosterior()
        for y in ys:
            q = q.update(y)
        assert QueuePosterior().update_batch(ys) == q

    def test_map(self):
        assert QueuePosterior(4, 4200).map_expected_time() == 1400
        assert QueuePosterior(2, 2400).map_expected_time() == 2400
        with pytest.raises(DegenerateMAP):
            QueuePosterior(1, 2400).map_expected_time()

    def test_invalid(self):
        with pytest.raises(ValueError):
            QueuePosterior(0, 1)

    def test_sample_mean(self):
        q = QueuePosterior(50.0, 30_000.0)
        rng = child_rng(41)
        xs = np.array([q.sample_expected_time(rng) for _ in range(20_000)])
        # E[1/lambda] = beta / (alpha - 1)
        assert xs.mean() == pytest.approx(30_000 / 49, rel=0.01)

    def test_ucb(self):
        q = QueuePosterior(3.0, 1800.0)
        assert q.ucb_expected_time(1) == pytest.approx(1 / stats.gamma(3, scale=1 / 1800).ppf(0.5), rel=1e-10)
        ts = [q.ucb_expected_time(t) for t in (2, 10, 100, 1000)]
        assert ts == sorted(ts, reverse=True)  # higher rate quantile, shorter time

    def test_point_mass(self):
        p = PointMassQueue(1 / 500)
        assert p.update(123.0) is p
        assert p.map_expected_time() == p.sample_expected_time(None) == p.ucb_expected_time(7) == 500


class TestUcbLevel:
    def test_values(self):
        assert ucb_level(1) == 0.5
        assert ucb_level(2) == 0.5
        assert ucb_level(10) == 0.9

    def test_invalid(self):
        with pytest.raises(ValueError):
            ucb_level(0)


class TestChargeDensity:
    def test_log_density_formula(self):
        a = 2.7
        expected = (a * 13.5 - 3 * a * math.log(300) - 3 * math.lgamma(a) + math.lgamma(3 * a))
        assert PRIOR.log_density_alpha(a) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("a", [0.4, 1.0, 3.0, 8.0])
    def test_marginal_of_joint(self, a):
        # integrating the joint over the rate recovers the shape marginal up to a constant
        def marg(alpha):
            val, _ = integrate.quad(lambda b: math.exp(joint_log(PRIOR, alpha, b) - PRIOR.log_density_alpha(alpha)),
                                    0, np.inf, limit=200)
            return val
        assert marg(a) == pytest.approx(marg(2.0), rel=1e-8)

    def test_concave(self):
        xs = np.linspace(0.01, 50, 5000)
        f = np.array([PRIOR.log_density_alpha(x) for x in xs])
        assert np.all(np.diff(f, 2) <= 1e-9)

    def test_derivative(self):
        h = 1e-6
        for a in (0.3, 3.0, 20.0):
            fd = (PRIOR.log_density_alpha(a + h) - PRIOR.log_density_alpha(a - h)) / (2 * h)
            assert PRIOR.dlog_density_alpha(a) == pytest.approx(fd, rel=1e-6)

    def test_domain(self):
        with pytest.raises(ValueError):
            PRIOR.log_density_alpha(0.0)


class TestChargeUpdate:
    def test_values(self):
        c = ChargePosterior(13.5, 300.0, 3.0, kappa=300.0).update(30_000.0)
        assert c == ChargePosterior(13.5 + math.log(100.0), 400.0, 4.0, 300.0)

    def test_zero_deficit(self):
        with pytest.raises(ZeroDeficit):
            PRIOR.update(0.0)

    def test_long_run_no_overflow(self):
        c = PRIOR.update_batch([100_000.0] * 5000)
        assert math.isfinite(c.ln_pi) and c.xi == 5003
        assert math.isfinite(c.mode_alpha())

    @pytest.mark.parametrize("seed", range(3))
    def test_pointwise_prior_times_likelihood(self, seed):
        rng = child_rng(50, seed)
        for kappa in (1.0, 300.0):
            prior = ChargePosterior(13.5, 300.0, 3.0, kappa)
            x = float(rng.gamma(2.0, 1 / 0.03))
            post = prior.update(x * kappa)
            a = np.linspace(0.05, 15, 300)[:, None]
            b = np.linspace(1e-4, 0.25, 300)[None, :]
            lhs = joint_log(post, a, b)
            rhs = joint_log(prior, a, b) + gamma_loglik(x, a, b)
            pl = np.exp(lhs - lhs.max())
            pr = np.exp(rhs - rhs.max())
            pl /= pl.sum()
            pr /= pr.sum()
            # points with non-negligible mass
            flat = np.argsort(pl, axis=None)[-5000:]
            pts = [np.unravel_index(flat[rng.integers(0, 5000)], pl.shape) for _ in range(20)]
            for i, j in pts:
                assert pl[i, j] == pytest.approx(pr[i, j], rel=1e-3)

    def test_integrability(self):
        assert PRIOR.integrable
        assert not ChargePosterior(13.5, 80.0, 3.0).integrable

    @settings(max_examples=50)
    @given(st.lists(st.floats(1e-3, 1e6), min_size=1, max_size=30))
    def test_update_preserves_integrability(self, xs):
        assert PRIOR.update_batch(xs).integrable

    def test_check_prior(self, caplog):
        with caplog.at_level(logging.WARNING):
            PRIOR.check_prior()
        assert "pi**(1/xi) >= 1" in caplog.text
        with pytest.raises(ValueError, match="improper"):
            ChargePosterior(13.5, 80.0, 3.0).check_prior()


class TestMode:
    def test_default_prior_grid(self):
        a = np.arange(1, 500_001) * 1e-4
        f = a * 13.5 - 3 * a * math.log(300) - 3 * special.gammaln(a) + special.gammaln(3 * a)
        best = a[np.argmax(f)]
        m = charge_mode_alpha(PRIOR)
        assert abs(m - best) <= 0.1
        assert m == pytest.approx(3.38, abs=0.1)
        g = 13.5 - 3 * math.log(300) - 3 * digamma(m) + 3 * digamma(3 * m)
        assert abs(g) < 1e-10

    def test_local_grid_maximum(self):
        c = PRIOR.update_batch([40_000.0, 25_000.0, 70_000.0])
        m = c.mode_alpha()
        grid = np.linspace(0.9 * m, 1.1 * m, 2001)
        assert all(c.log_density_alpha(m) >= c.log_density_alpha(x) - 1e-12 for x in grid)

    def test_xi_one_has_no_interior_mode(self):
        with pytest.raises(NoInteriorMode):
            ChargePosterior(5.0, 300.0, 1.0).mode_alpha()


class TestChargeEstimates:
    def test_map_default_prior(self):
        m = PRIOR.mode_alpha()
        b = (3 * m - 1) / 300
        assert b == pytest.approx(0.03047, rel=0.01)
        assert PRIOR.map_expected_power(150_000, 75_000) == pytest.approx(116_720, rel=0.05)
        assert PRIOR.map_expected_power(150_000, 75_000) == pytest.approx(150_000 - 300 * m / b, rel=1e-12)

    def test_clamp_to_min(self):
        assert PRIOR.map_expected_power(40_000, 20_000) == 20_000
        assert PRIOR.map_expected_power(40_000) == 20_000  # min defaults to half of max

    def test_kappa_zero(self):
        assert ChargePosterior(13.5, 300, 3, kappa=0.0).map_expected_power(150_000, 75_000) == 150_000

    def test_degenerate_map(self):
        c = PRIOR.update(1e-3)  # one near-zero deficit pushes xi * alpha below 1
        with pytest.raises(DegenerateMAP):
            c.map_expected_power(150_000, 75_000)

    def test_ucb_median_at_t2(self):
        m = PRIOR.mode_alpha()
        b = stats.gamma(3 * m, scale=1 / 300).median()
        assert PRIOR.ucb_expected_power(2, 150_000, 75_000) == pytest.approx(150_000 - 300 * m / b, rel=1e-9)

    def test_ucb_monotone_in_t(self):
        c = PRIOR.update_batch([20_000.0, 30_000.0])
        ps = [c.ucb_expected_power(t, 350_000, 175_000) for t in (2, 10, 100, 1000)]
        assert ps == sorted(ps)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(1.0, 2e5), max_size=8), st.integers(1, 500), st.integers(0, 1000),
           st.sampled_from([50_000.0, 150_000.0, 350_000.0]))
    def test_estimates_in_range(self, xs, t, seed, pmax):
        c = PRIOR.update_batch(xs)
        vals = [c.ucb_expected_power(t, pmax, pmax / 2),
                c.sample_expected_power(child_rng(seed), pmax, pmax / 2)]
        try:
            vals.append(c.map_expected_power(pmax, pmax / 2))
        except DegenerateMAP:
            pass
        assert all(pmax / 2 <= v <= pmax for v in vals)

    def test_sample_distribution_of_alpha(self):
        # draws feed sample_expected_power; check the shape draws against quadrature
        s = AlphaSampler()
        rng = child_rng(60)
        xs = np.array([s.draw(PRIOR, rng) for _ in range(5000)])
        z, _ = integrate.quad(lambda a: math.exp(PRIOR.log_density_alpha(a) - PRIOR.log_density_alpha(3.376)), 0, 60)
        mean, _ = integrate.quad(lambda a: a * math.exp(PRIOR.log_density_alpha(a) - PRIOR.log_density_alpha(3.376)),
                                 0, 60)
        assert xs.mean() == pytest.approx(mean / z, rel=0.03)

    def test_sampler_reused_until_update(self):
        s = AlphaSampler()
        rng = child_rng(61)
        s.draw(PRIOR, rng)
        first = s._tdr
        s.draw(PRIOR, rng)
        assert s._tdr is first
        s.draw(PRIOR.update(10_000.0), rng)
        assert s._tdr is not first

    def test_fallback_is_sticky(self, monkeypatch):
        s = AlphaSampler()

        def boom(self, rng):
            raise SamplerFailure("forced")

        monkeypatch.setattr("evcmab.numerics.TdrSampler.sample", boom)
        mapped = PRIOR.map_expected_power(150_000, 75_000)
        assert PRIOR.sample_expected_power(child_rng(0), 150_000, 75_000, s) == mapped
        assert s.failed
        monkeypatch.undo()
        assert PRIOR.sample_expected_power(child_rng(0), 150_000, 75_000, s) == mapped

    def test_point_mass(self):
        p = PointMassCharge(2.0, 0.02, 300.0)
        assert p.map_expected_power(150_000, 75_000) == 150_000 - 300 * 100
        assert p.update(5.0) is p
        assert p.ucb_expected_power(3, 150_000, 75_000) == p.sample_expected_power(None, 150_000, 75_000)


class TestSnapshot:
    def test_round_trip_bit_exact(self, tmp_path):
        q = {3: QueuePosterior(7.0, 4123.123456789), 11: QueuePosterior()}
        c = {3: PRIOR.update_batch([12345.678, 0.1]), 11: PRIOR}
        fb = {3: True, 11: False}
        write_snapshot(tmp_path / "s.csv", q, c, fb)
        q2, c2, fb2 = read_snapshot(tmp_path / "s.csv")
        assert q2 == q and c2 == c and fb2 == fb

    def test_priors(self):
        p = Priors()
        assert p.queue() == QueuePosterior(2.0, 2400.0)
        assert p.charge() == PRIOR
