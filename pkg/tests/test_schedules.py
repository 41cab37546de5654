import math

import numpy as np
import pytest

from driftlab.schedules import (
    ScheduleError,
    VESchedule,
    VPSchedule,
    forward_sample,
    ve_sigma,
    vesde_larger,
    vesde_matched,
    vp_coeffs,
)


class TestVPCoeffs:
    def test_tau_zero_is_identity(self):
        beta, sigma = vp_coeffs(0.0, 0.0, 20.0)
        assert beta == 1.0
        assert sigma == 0.0

    def test_midpoint_closed_form(self):
        beta, sigma = vp_coeffs(0.5, 0.0, 20.0)
        assert beta == pytest.approx(math.exp(-1.25), rel=1e-15)
        assert sigma**2 == pytest.approx(1.0 - math.exp(-2.5), rel=1e-12)
        assert sigma**2 == pytest.approx(0.9179150, abs=1e-7)

    def test_terminal_value(self):
        beta, _ = vp_coeffs(1.0, 0.0, 20.0)
        assert beta == pytest.approx(math.exp(-5.0), rel=1e-15)
        assert beta == pytest.approx(6.73795e-3, abs=1e-8)

    @pytest.mark.parametrize("g0,g1", [(0.0, 20.0), (0.1, 20.0), (1.0, 10.0)])
    def test_variance_preserving_identity(self, g0, g1):
        taus = np.linspace(0.0, 1.0, 1001)
        beta, sigma = vp_coeffs(taus, g0, g1)
        np.testing.assert_allclose(beta**2 + sigma**2, 1.0, rtol=0, atol=1e-12)

    def test_beta_strictly_decreasing(self):
        taus = np.linspace(0.0, 1.0, 501)
        beta, _ = vp_coeffs(taus, 0.0, 20.0)
        assert np.all(np.diff(beta) < 0)


class TestVESigma:
    def test_endpoints(self):
        assert ve_sigma(0.0, 0.03, 1.0) == pytest.approx(0.03, rel=1e-15)
        assert ve_sigma(1.0, 0.03, 1.0) == pytest.approx(1.0, rel=1e-15)
        assert ve_sigma(1.0, 0.03, 15.0) == pytest.approx(15.0, rel=1e-12)

    def test_geometric_midpoint(self):
        assert ve_sigma(0.5, 0.03, 15.0) == pytest.approx(math.sqrt(0.45), rel=1e-12)
        assert ve_sigma(0.5, 0.03, 15.0) == pytest.approx(0.67082, abs=1e-5)

    def test_strictly_increasing(self):
        taus = np.linspace(0.0, 1.0, 501)
        phi = ve_sigma(taus, 0.03, 1.0)
        assert np.all(np.diff(phi) > 0)

    def test_presets(self):
        m = vesde_matched()
        assert (m.phi0, m.phi1, m.eps) == (0.03, 1.0, 6.5e-2)
        lg = vesde_larger()
        assert (lg.phi0, lg.phi1, lg.eps) == (0.03, 15.0, 5e-2)


class TestScheduleValidation:
    def test_vp_requires_ordered_gammas(self):
        with pytest.raises(ScheduleError):
            VPSchedule(gamma0=5.0, gamma1=1.0)

    def test_ve_requires_increasing_phis(self):
        with pytest.raises(ScheduleError):
            VESchedule(phi0=1.0, phi1=0.5)

    def test_positive_eps(self):
        with pytest.raises(ScheduleError):
            VPSchedule(eps=0.0)


class TestForwardSample:
    def test_tau_below_floor_rejected(self):
        sched = VPSchedule()
        rng = np.random.default_rng(0)
        with pytest.raises(ScheduleError, match="explodes"):
            forward_sample(np.zeros((1, 1)), 1e-6, sched, rng)

    def test_reproducible_for_fixed_seed(self):
        sched = VPSchedule()
        x0 = np.ones((5, 2))
        a = forward_sample(x0, 0.4, sched, np.random.default_rng(3))
        b = forward_sample(x0, 0.4, sched, np.random.default_rng(3))
        assert np.array_equal(a, b)

    def test_vp_marginal_variance(self):
        sched = VPSchedule()
        rng = np.random.default_rng(1)
        tau = 0.6
        draws = forward_sample(np.zeros((10_000, 1)), tau, sched, rng)
        _, sigma = sched.coeff_pair(tau)
        assert abs(draws.var() - sigma**2) / sigma**2 < 0.05

    def test_vp_marginal_mean(self):
        sched = VPSchedule()
        rng = np.random.default_rng(2)
        tau = 0.3
        x0 = np.full((100_000, 1), 2.0)
        draws = forward_sample(x0, tau, sched, rng)
        beta, sigma = sched.coeff_pair(tau)
        assert abs(draws.mean() - beta * 2.0) < 4 * sigma / math.sqrt(100_000)

    def test_ve_adds_noise_around_x0(self):
        sched = VESchedule(phi0=0.03, phi1=1.0, eps=6.5e-2)
        rng = np.random.default_rng(4)
        tau = 0.5
        draws = forward_sample(np.full((20_000, 1), 1.5), tau, sched, rng)
        phi = float(sched.phi(tau))
        assert abs(draws.mean() - 1.5) < 4 * phi / math.sqrt(20_000)
        assert abs(draws.var() - phi**2) / phi**2 < 0.05

    def test_per_row_tau(self):
        sched = VPSchedule()
        rng = np.random.default_rng(5)
        taus = np.array([[0.2], [0.9]])
        out = forward_sample(np.zeros((2, 3)), taus, sched, rng)
        assert out.shape == (2, 3)
