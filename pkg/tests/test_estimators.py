import math

import numpy as np
import pytest

from driftlab.estimators import (
    AnalyticDenoiserNet,
    DenoisingEstimator,
    EstimatorError,
    OracleEstimator,
    analytic_em_denoiser,
    coeffs,
    reverse_sample,
    score_from_net,
    tau_sweep,
)
from driftlab.schedules import VESchedule, VPSchedule


SCHED = VPSchedule(gamma0=0.0, gamma1=20.0, eps=1e-3)


def em_posterior_mean_quadrature(x, mu, delta, tau, sched, n_grid=40_001):
    """Independent oracle: E[X0 | X_tau = x] by quadrature over the
    Gaussian posterior with prior N(mu delta, delta)."""
    beta, sigma = sched.coeff_pair(tau)
    beta, sigma = float(beta), float(sigma)
    half = 12.0 * math.sqrt(delta) + abs(mu) * delta + abs(x)
    grid = np.linspace(mu * delta - half, mu * delta + half, n_grid)
    prior = np.exp(-((grid - mu * delta) ** 2) / (2.0 * delta))
    lik = np.exp(-((x - beta * grid) ** 2) / (2.0 * sigma**2))
    w = prior * lik
    return np.trapezoid(grid * w, grid) / np.trapezoid(w, grid)


class TestCoeffs:
    def test_closed_form_at_terminal_time(self):
        c = coeffs(1.0, 1 / 256, SCHED)
        beta = math.exp(-5.0)
        s2 = 1.0 - beta**2
        assert c.a == pytest.approx(-beta / s2, rel=1e-15)
        assert c.a == pytest.approx(-6.738253e-3, abs=1e-9)
        assert c.b == pytest.approx(256.0 + beta**2 / s2, rel=1e-12)
        assert c.b == pytest.approx(256.0000454, abs=1e-6)

    def test_tau_below_floor_guarded(self):
        with pytest.raises(EstimatorError):
            coeffs(1e-6, 1 / 256, SCHED)

    def test_magnitude_grows_near_floor(self):
        near_floor = coeffs(SCHED.eps, 1 / 256, SCHED)
        mid = coeffs(0.5, 1 / 256, SCHED)
        assert abs(near_floor.a) > 100 * abs(mid.a)

    def test_large_delta_limit(self):
        tau = 0.4
        beta, sigma = SCHED.coeff_pair(tau)
        c = coeffs(tau, 1e6, SCHED)
        assert c.b == pytest.approx(float(beta) ** 2 / float(sigma) ** 2, rel=1e-5)

    def test_ve_coefficients(self):
        sched = VESchedule(phi0=0.03, phi1=1.0, eps=6.5e-2)
        tau, delta = 0.5, 0.01
        phi = float(sched.phi(tau))
        c = coeffs(tau, delta, sched)
        assert c.a == pytest.approx(-1.0 / phi**2, rel=1e-12)
        assert c.b == pytest.approx((phi**2 + delta) / (phi**2 * delta), rel=1e-12)


class TestAnalyticDenoiser:
    def test_zero_inputs(self):
        out = analytic_em_denoiser(np.zeros(3), np.zeros(3), 0.5, 0.01, SCHED)
        np.testing.assert_array_equal(out, np.zeros(3))

    def test_ve_schedule_rejected(self):
        with pytest.raises(EstimatorError):
            analytic_em_denoiser(np.zeros(1), np.zeros(1),
                                 0.5, 0.01, VESchedule(phi0=0.03, phi1=1.0))

    def test_inversion_identity_exact(self):
        # a(tau) x + b(tau) E[X0 | x] recovers mu at machine precision.
        # Near the tau floor the identity cancels terms of size |a x|,
        # so "exact" means relative to the largest cancelled term.
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            tau = rng.uniform(SCHED.eps, 1.0)
            delta = rng.uniform(1e-4, 1.0)
            mu = rng.standard_normal()
            x = rng.standard_normal() * 2.0
            den = analytic_em_denoiser(np.array([x]), np.array([mu]), tau, delta, SCHED)
            c = coeffs(tau, delta, SCHED)
            rec = c.a * x + c.b * den[0]
            assert abs(rec - mu) <= 1e-12 * max(1.0, abs(mu), abs(c.a * x))

    def test_quadrature_oracle(self):
        val = analytic_em_denoiser(np.array([0.2]), np.array([1.3]), 0.5, 0.01, SCHED)[0]
        oracle = em_posterior_mean_quadrature(0.2, 1.3, 0.01, 0.5, SCHED)
        assert val == pytest.approx(oracle, abs=1e-6)


class TestScoreReparameterisation:
    def test_matches_analytic_gaussian_score(self):
        # composing the score formula with the analytic denoiser must give
        # the score of N(beta mu delta, beta^2 delta + sigma^2)
        delta, mu = 1 / 256, 0.8
        net = AnalyticDenoiserNet(lambda y: np.full_like(y, mu), delta, SCHED)
        rng = np.random.default_rng(1)
        for tau in [0.05, 0.3, 0.7, 1.0]:
            beta, sigma = SCHED.coeff_pair(tau)
            beta, s2 = float(beta), float(sigma) ** 2
            x = rng.standard_normal((50, 1))
            y = np.zeros((50, 1))
            s = score_from_net(net, tau, x, y, SCHED, delta_scale=1.0)
            expected = -(x - beta * mu * delta) / (beta**2 * delta + s2)
            np.testing.assert_allclose(s, expected, rtol=1e-12, atol=1e-12)


class TestDenoisingEstimator:
    def _oracle_estimator(self, drift, delta=1 / 256, k=10, tau=1.0):
        net = AnalyticDenoiserNet(drift, delta, SCHED)
        return DenoisingEstimator(net, SCHED, delta, k=k, tau=tau, target_scale="raw")

    def test_analytic_net_recovers_drift_exactly(self):
        drift = lambda y: -(y**3) + y
        est = self._oracle_estimator(drift)
        rng = np.random.default_rng(2)
        y = np.linspace(-1.5, 1.5, 7)[:, None]
        out = est.estimate(y, rng)
        np.testing.assert_allclose(out, drift(y), rtol=1e-10, atol=1e-12)

    def test_k1_equals_single_sample_on_same_draw(self):
        est = self._oracle_estimator(lambda y: -y, k=1)
        y = np.array([[0.4], [-0.2]])
        draws = est.draw_noise(y, np.random.default_rng(3))
        single = est.estimate_single(y, draws[0])
        averaged = est._singles(y, draws).mean(axis=0)
        np.testing.assert_array_equal(single, averaged)

    def test_deterministic_for_fixed_seed(self):
        est = self._oracle_estimator(lambda y: -y, k=4)
        y = np.array([[0.1]])
        a = est.estimate(y, np.random.default_rng(5))
        b = est.estimate(y, np.random.default_rng(5))
        assert np.array_equal(a, b)

    def test_zero_net_mean_over_seeds_vanishes(self):
        class ZeroNet:
            conditional = True

            def __call__(self, tau, x, y):
                from driftlab.autodiff import Tensor

                return Tensor(np.zeros_like(y.data))

        est = DenoisingEstimator(ZeroNet(), SCHED, 1 / 256, k=8, tau=1.0,
                                 target_scale="raw")
        y = np.array([[0.7]])
        c = coeffs(1.0, 1 / 256, SCHED)
        vals = [est.estimate(y, np.random.default_rng(s))[0, 0] for s in range(200)]
        # each estimate is a(1) * mean of K standard normals
        assert abs(np.mean(vals)) < 4 * abs(c.a) / math.sqrt(200 * 8)

    def test_variance_shrinks_with_k(self):
        class WigglyNet:
            conditional = True

            def __call__(self, tau, x, y):
                from driftlab.autodiff import Tensor

                return Tensor(np.sin(3.0 * x.data) * 0.05)

        est1 = DenoisingEstimator(WigglyNet(), SCHED, 1 / 256, k=1, tau=1.0,
                                  target_scale="raw")
        est100 = DenoisingEstimator(WigglyNet(), SCHED, 1 / 256, k=100, tau=1.0,
                                    target_scale="raw")
        y = np.array([[0.0]])
        v1 = np.var([est1.estimate(y, np.random.default_rng(s))[0, 0] for s in range(120)])
        v100 = np.var([est100.estimate(y, np.random.default_rng(s))[0, 0] for s in range(120)])
        assert v100 < v1

    def test_envelope_ordering(self):
        est = self._oracle_estimator(lambda y: -y, k=50)
        y = np.linspace(-1, 1, 5)[:, None]
        mean, lo, hi = est.estimate_with_envelope(y, np.random.default_rng(8))
        assert np.all(lo <= hi)
        assert np.all(lo <= mean + 1e-12) and np.all(mean - 1e-12 <= hi)

    def test_equivariance_under_rotation(self):
        # cyclic shift of y and the noise draw shifts the estimate (conv nets)
        from driftlab.nets import ArchSpec, build

        spec = ArchSpec(kind="dn", dim=6, width_scale=0.5)
        net = build(spec, seed=0)

        class ConvOnly:
            conditional = True

            def __call__(self, tau, x, y):
                return net.g([x, y])

        est = DenoisingEstimator(ConvOnly(), SCHED, 1 / 256, k=1, tau=1.0,
                                 target_scale="raw")
        rng = np.random.default_rng(9)
        y = rng.standard_normal((1, 6))
        x = rng.standard_normal((1, 6))
        base = est.estimate_single(y, x)
        shifted = est.estimate_single(np.roll(y, 2, axis=1), np.roll(x, 2, axis=1))
        np.testing.assert_allclose(shifted, np.roll(base, 2, axis=1), rtol=1e-10, atol=1e-12)


class TestReverseSample:
    def test_tau_target_one_returns_initial_draw(self):
        net = AnalyticDenoiserNet(lambda y: -y, 1 / 256, SCHED)
        y = np.zeros((10, 1))
        rng = np.random.default_rng(0)
        out = reverse_sample(net, y, 1.0, 100, rng, SCHED)
        rng2 = np.random.default_rng(0)
        np.testing.assert_array_equal(out, rng2.standard_normal((10, 1)))

    @pytest.mark.parametrize("tau_target", [0.2, 0.5])
    def test_gaussian_analytic_score_marginals(self, tau_target):
        # p0 = N(m, v): the tau marginal is N(beta m, beta^2 v + sigma^2).
        # m is large enough that 5% of the mean is several MC standard
        # errors at 10^4 samples.
        m, v = 2.0, 0.09

        class GaussNet:
            conditional = True

            def __call__(self, tau, x, y):
                from driftlab.autodiff import Tensor

                t = float(np.ravel(tau.data)[0])
                beta, sigma = SCHED.coeff_pair(t)
                beta, s2 = float(beta), float(sigma) ** 2
                post = (s2 * m + v * beta * x.data) / (s2 + beta**2 * v)
                return Tensor(post)

        rng = np.random.default_rng(42)
        y = np.zeros((10_000, 1))
        samples = reverse_sample(GaussNet(), y, tau_target, 500, rng, SCHED)
        beta, sigma = SCHED.coeff_pair(tau_target)
        beta, s2 = float(beta), float(sigma) ** 2
        target_mean = beta * m
        target_var = beta**2 * v + s2
        assert abs(samples.mean() - target_mean) / abs(target_mean) < 0.05
        assert abs(samples.var() - target_var) / target_var < 0.05

    def test_refining_steps_changes_mean_within_mc_error(self):
        m, v = 0.5, 0.04

        class GaussNet:
            conditional = True

            def __call__(self, tau, x, y):
                from driftlab.autodiff import Tensor

                t = float(np.ravel(tau.data)[0])
                beta, sigma = SCHED.coeff_pair(t)
                beta, s2 = float(beta), float(sigma) ** 2
                post = (s2 * m + v * beta * x.data) / (s2 + beta**2 * v)
                return Tensor(post)

        y = np.zeros((20_000, 1))
        a = reverse_sample(GaussNet(), y, 0.3, 250, np.random.default_rng(1), SCHED)
        b = reverse_sample(GaussNet(), y, 0.3, 500, np.random.default_rng(2), SCHED)
        se = math.sqrt(b.var() / b.size)
        assert abs(a.mean() - b.mean()) < 4 * se

    def test_invalid_tau_target(self):
        net = AnalyticDenoiserNet(lambda y: -y, 1 / 256, SCHED)
        with pytest.raises(EstimatorError):
            reverse_sample(net, np.zeros((1, 1)), 1e-9, 10,
                           np.random.default_rng(0), SCHED)


class TestTauSweep:
    def test_trained_bipot8_error_flat_over_upper_tau_range(self):
        # separable bistable drift in 8 dimensions, desk scale: with
        # K=100 the error at tau=1 sits within 2x of the minimum over
        # tau in [0.15, 1]
        from driftlab.nets import ArchSpec, build, set_params
        from driftlab.sde import DriftSpec, make_increments, simulate
        from driftlab.training import TrainConfig, train

        drift = DriftSpec("mu_bipot", dim=8)
        train_ds = simulate(drift, 1.0, 100, 256, 1 / 256, seed=400)
        heldout = simulate(drift, 1.0, 50, 256, 1 / 256, seed=401)
        net = build(ArchSpec(kind="dn", dim=8, width_scale=0.5), seed=402)
        config = TrainConfig(epochs=50, batch_size=256, lr=1e-2, patience=100,
                             validation="oracle_tau", val_k=10, val_stride=4,
                             seed=403)
        ckpt, _ = train(config, make_increments(train_ds), heldout, net,
                        true_drift=drift, schedule=SCHED)
        set_params(net, ckpt)
        est = DenoisingEstimator(net, SCHED, 1 / 256, k=100, tau=1.0)
        states = train_ds.states.reshape(-1, 8)
        center = states.mean(axis=0)
        pts = []
        for coord in (0, 3, 7):
            lo, hi = np.quantile(states[:, coord], [0.005, 0.995])
            block = np.tile(center, (25, 1))
            block[:, coord] = np.linspace(lo, hi, 25)
            pts.append(block)
        taus = np.logspace(np.log10(0.15), 0.0, 12)
        res = tau_sweep(est, taus, np.concatenate(pts), drift, ks=(100,),
                        rng=np.random.default_rng(404), base_steps=300)
        e2 = res[100]
        assert e2[-1] < 2.0 * e2.min()

    def test_perfect_estimator_zero_error_everywhere(self):
        drift = lambda y: -(y**3) + y
        net = AnalyticDenoiserNet(drift, 1 / 256, SCHED)
        est = DenoisingEstimator(net, SCHED, 1 / 256, k=10, tau=1.0, target_scale="raw")
        taus = np.array([0.2, 0.5, 1.0])
        y_pts = np.linspace(-1, 1, 9)[:, None]
        res = tau_sweep(est, taus, y_pts, drift, ks=(1, 10), rng=np.random.default_rng(3),
                        base_steps=200)
        for k, e2 in res.items():
            np.testing.assert_allclose(e2, 0.0, atol=1e-18)

    def test_requires_nested_ks(self):
        net = AnalyticDenoiserNet(lambda y: -y, 1 / 256, SCHED)
        est = DenoisingEstimator(net, SCHED, 1 / 256, k=10, tau=1.0, target_scale="raw")
        with pytest.raises(EstimatorError):
            tau_sweep(est, [0.5, 1.0], np.zeros((2, 1)), lambda y: -y, ks=(3, 10),
                      rng=np.random.default_rng(0))


class TestOracleEstimator:
    def test_returns_true_drift(self):
        est = OracleEstimator(lambda y: -2.0 * y)
        y = np.array([[1.0], [2.0]])
        np.testing.assert_array_equal(est.estimate(y), -2.0 * y)
