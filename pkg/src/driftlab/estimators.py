"""Denoising drift estimators and the reverse-SDE sampler.

The recovery algebra: under the Euler-Maruyama approximation the
increment given the state is Gaussian, the denoiser E[X0 | X_tau, Y] is
closed form, and the drift is recovered exactly by

    mu(y) = a(tau) x_tau + b_Delta(tau) E[X0 | X_tau = x_tau, Y = y],

with a = -beta/sigma^2 and b = (sigma^2 + beta^2 Delta)/(sigma^2 Delta).
A trained network stands in for the denoiser; averaging the single-sample
estimator over K noise draws removes its linear dependence on x_tau.

Networks may be trained against the scaled target Delta^{-1} X0
(``target_scale="inverse_delta"``); the forward process always noisifies
the raw increment, and the estimator and score formulas multiply the
network output by Delta to land back on denoiser scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .schedules import ScheduleError, VESchedule, VPSchedule


class EstimatorError(Exception):
    pass


@dataclass(frozen=True)
class EstimatorCoeffs:
    a: float
    b: float
    tau: float
    delta: float


def coeffs(tau: float, delta: float, schedule) -> EstimatorCoeffs:
    """Closed-form inversion coefficients a(tau), b_Delta(tau)."""
    if delta <= 0:
        raise EstimatorError("delta must be positive")
    if tau < schedule.eps:
        raise EstimatorError(f"tau={tau} below schedule floor {schedule.eps}")
    beta, sigma = schedule.coeff_pair(np.float64(tau))
    s2 = float(sigma) ** 2
    if s2 <= 0.0:
        raise EstimatorError("sigma_tau = 0: coefficients are singular")
    a = -float(beta) / s2
    b = (s2 + float(beta) ** 2 * delta) / (s2 * delta)
    return EstimatorCoeffs(a=a, b=b, tau=float(tau), delta=float(delta))


def analytic_em_denoiser(x_tau, mu_y, tau: float, delta: float, schedule):
    """Closed-form denoiser under the EM increment law (VP schedule only)."""
    if not isinstance(schedule, VPSchedule):
        raise EstimatorError("analytic EM denoiser is derived for the VP schedule only")
    beta, sigma = schedule.coeff_pair(np.float64(tau))
    s2 = float(sigma) ** 2
    if s2 <= 0.0:
        raise EstimatorError("sigma_tau = 0")
    x_tau = np.asarray(x_tau, dtype=np.float64)
    mu_y = np.asarray(mu_y, dtype=np.float64)
    scale = s2 * delta / (s2 + float(beta) ** 2 * delta)
    return scale * (mu_y + float(beta) / s2 * x_tau)


class AnalyticDenoiserNet:
    """Oracle denoiser wrapping a true drift function; raw target scale.

    Vectorised over per-row tau so it can stand in for a trained network
    anywhere, including inside the training objective.
    """

    conditional = True
    params: dict = {}

    def __init__(self, drift, delta: float, schedule):
        if not isinstance(schedule, VPSchedule):
            raise EstimatorError("analytic EM denoiser is derived for the VP schedule only")
        self.drift = drift
        self.delta = delta
        self.schedule = schedule

    def __call__(self, tau, x, y):
        wrap = isinstance(x, Tensor)
        tau = tau.data if isinstance(tau, Tensor) else np.asarray(tau)
        x = x.data if isinstance(x, Tensor) else np.asarray(x)
        y = y.data if isinstance(y, Tensor) else np.asarray(y)
        beta, sigma = self.schedule.coeff_pair(np.reshape(tau, (-1, 1)))
        s2 = sigma**2
        scale = s2 * self.delta / (s2 + beta**2 * self.delta)
        out = scale * (np.atleast_2d(self.drift(y)) + beta / s2 * x)
        return Tensor(out) if wrap else out


def _eval_net(net, tau, x, y) -> np.ndarray:
    """Run a network on plain arrays without recording gradients."""
    if isinstance(net, AnalyticDenoiserNet):
        return net(tau, x, y)
    with no_grad():
        out = net(Tensor(tau), Tensor(x), Tensor(y))
    return out.data


def _delta_scale(target_scale: str, delta: float) -> float:
    if target_scale == "inverse_delta":
        return delta
    if target_scale == "raw":
        return 1.0
    raise EstimatorError(f"unknown target_scale {target_scale!r}")


def score_from_net(net, tau: float, x: np.ndarray, y: np.ndarray, schedule,
                   delta_scale: float = 1.0) -> np.ndarray:
    """Conditional score via the denoiser reparameterisation.

    s(tau, x, y) = -x / sigma^2 + (beta / sigma^2) * delta_scale * net(tau, x, y).
    """
    beta, sigma = schedule.coeff_pair(np.float64(tau))
    s2 = float(sigma) ** 2
    tau_col = np.full((x.shape[0], 1), tau)
    d_out = delta_scale * _eval_net(net, tau_col, x, y)
    return -x / s2 + float(beta) / s2 * d_out


def reverse_sample(net, y: np.ndarray, tau_target: float, steps: int,
                   rng: np.random.Generator, schedule,
                   delta_scale: float = 1.0, x_init: np.ndarray | None = None) -> np.ndarray:
    """Euler-Maruyama integration of the reverse-time SDE from tau=1 down.

    Returns samples approximately distributed as p_{tau_target}(x | y).
    At tau_target = 1 the initial N(0, I) draw is returned unchanged.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise EstimatorError("y must be (N, D)")
    if not (schedule.eps <= tau_target <= 1.0):
        raise EstimatorError(f"tau_target must lie in [{schedule.eps}, 1]")
    if steps < 1:
        raise EstimatorError("steps must be >= 1")
    x = rng.standard_normal(y.shape) if x_init is None else np.array(x_init, dtype=np.float64)
    if tau_target >= 1.0:
        return x
    taus = np.linspace(1.0, tau_target, steps + 1)
    for i in range(steps):
        tau = taus[i]
        h = taus[i] - taus[i + 1]
        s = score_from_net(net, tau, x, y, schedule, delta_scale)
        if isinstance(schedule, VPSchedule):
            g2 = float(schedule.gamma(tau))
            drift = g2 * (0.5 * x + s)
        elif isinstance(schedule, VESchedule):
            g2 = 2.0 * np.log(schedule.phi1 / schedule.phi0) * float(schedule.phi(tau)) ** 2
            drift = g2 * s
        else:
            raise ScheduleError(f"unsupported schedule {schedule!r}")
        x = x + h * drift + np.sqrt(g2 * h) * rng.standard_normal(x.shape)
        if not np.isfinite(x).all():
            raise EstimatorError(
                f"non-finite state during reverse integration at tau={taus[i + 1]:.6g}"
            )
    return x


class DenoisingEstimator:
    """Fitted denoising drift estimator with the common estimate(y) contract.

    K noise draws are averaged; tau* = 1 draws x ~ N(0, I) directly,
    tau* < 1 samples x via the reverse SDE driven by the same network.
    """

    def __init__(self, net, schedule, delta: float, k: int = 100, tau: float = 1.0,
                 target_scale: str = "inverse_delta", reverse_steps: int = 10_000):
        if k < 1:
            raise EstimatorError("K must be >= 1")
        if not (schedule.eps <= tau <= 1.0):
            raise EstimatorError(f"tau* must lie in [{schedule.eps}, 1]")
        self.net = net
        self.schedule = schedule
        self.delta = float(delta)
        self.k = int(k)
        self.tau = float(tau)
        self.target_scale = target_scale
        self.reverse_steps = int(reverse_steps)
        self._dscale = _delta_scale(target_scale, self.delta)

    def estimate_single(self, y: np.ndarray, x_tau: np.ndarray,
                        tau: float | None = None) -> np.ndarray:
        """One-draw estimator a(tau) x + b(tau) * Delta_scale * net(tau, x, y)."""
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        x_tau = np.atleast_2d(np.asarray(x_tau, dtype=np.float64))
        t = self.tau if tau is None else float(tau)
        c = coeffs(t, self.delta, self.schedule)
        tau_col = np.full((y.shape[0], 1), t)
        d_out = self._dscale * _eval_net(self.net, tau_col, x_tau, y)
        return c.a * x_tau + c.b * d_out

    def draw_noise(self, y: np.ndarray, rng: np.random.Generator,
                   k: int | None = None) -> np.ndarray:
        """K conditioning draws x_tau per row of y; shape (K, N, D)."""
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        k = self.k if k is None else int(k)
        n, d = y.shape
        if self.tau >= 1.0:
            return rng.standard_normal((k, n, d))
        y_rep = np.repeat(y[None, :, :], k, axis=0).reshape(k * n, d)
        x = reverse_sample(self.net, y_rep, self.tau, self.reverse_steps, rng,
                           self.schedule, self._dscale)
        return x.reshape(k, n, d)

    def _singles(self, y: np.ndarray, draws: np.ndarray) -> np.ndarray:
        k, n, d = draws.shape
        y_rep = np.repeat(y[None, :, :], k, axis=0).reshape(k * n, d)
        singles = self.estimate_single(y_rep, draws.reshape(k * n, d))
        return singles.reshape(k, n, d)

    def estimate(self, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """K-averaged drift estimate at each row of y."""
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        return self._singles(y, self.draw_noise(y, rng)).mean(axis=0)

    def estimate_with_envelope(self, y: np.ndarray, rng: np.random.Generator,
                               q_lo: float = 0.1, q_hi: float = 0.9):
        """Mean estimate plus the (q_lo, q_hi) quantile envelope over K draws."""
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        singles = self._singles(y, self.draw_noise(y, rng))
        return (
            singles.mean(axis=0),
            np.quantile(singles, q_lo, axis=0),
            np.quantile(singles, q_hi, axis=0),
        )


class RegressionEstimator:
    """Drift estimate read directly off a regression network's output."""

    def __init__(self, net, delta: float, target_scale: str = "inverse_delta"):
        self.net = net
        self.delta = float(delta)
        self.target_scale = target_scale
        # inverse_delta networks already output drift scale
        self._out_scale = 1.0 if target_scale == "inverse_delta" else 1.0 / self.delta

    def estimate(self, y: np.ndarray, rng=None) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        tau_col = np.zeros((y.shape[0], 1))
        return self._out_scale * _eval_net(self.net, tau_col, np.zeros_like(y), y)


class OracleEstimator:
    """The true drift, used as a zero-floor sanity control in rosters."""

    def __init__(self, drift):
        self.drift = drift

    def estimate(self, y: np.ndarray, rng=None) -> np.ndarray:
        return np.atleast_2d(self.drift(np.atleast_2d(np.asarray(y, dtype=np.float64))))


def _stability_substeps(schedule, tau_hi: float, tau_lo: float, base_h: float) -> int:
    """Substep count keeping h * gamma / sigma^2 bounded on [tau_lo, tau_hi]."""
    width = tau_hi - tau_lo
    n = max(1, int(np.ceil(width / base_h)))
    if isinstance(schedule, VPSchedule):
        _, sigma = schedule.coeff_pair(np.float64(tau_lo))
        g = float(schedule.gamma(tau_hi))
        s2 = max(float(sigma) ** 2, 1e-12)
        n_stiff = int(np.ceil(width * g / (0.5 * s2)))
        n = max(n, n_stiff)
    return n


def tau_sweep(est: DenoisingEstimator, taus, y_points: np.ndarray, true_drift,
              ks, rng: np.random.Generator, base_steps: int = 500) -> dict[int, np.ndarray]:
    """Drift MSE e^2(tau) over a tau grid for each sample count K.

    One reverse pass integrates from tau = 1 down through the sorted grid;
    at every grid point the max(ks) single-sample estimates per y are
    averaged in nested disjoint groups of each K, so all K share draws.
    Returned arrays are aligned with the grid sorted ascending.
    """
    taus = np.sort(np.asarray(taus, dtype=np.float64))[::-1]
    if taus[0] > 1.0 or taus[-1] < est.schedule.eps:
        raise EstimatorError("tau grid must lie within [eps, 1]")
    ks = sorted(int(k) for k in ks)
    k_max = ks[-1]
    if any(k_max % k != 0 for k in ks):
        raise EstimatorError("every K must divide max(K) for nested averaging")
    y_points = np.atleast_2d(np.asarray(y_points, dtype=np.float64))
    n, d = y_points.shape
    mu_true = np.atleast_2d(true_drift(y_points))

    y_rep = np.repeat(y_points[None, :, :], k_max, axis=0).reshape(k_max * n, d)
    x = rng.standard_normal((k_max * n, d))
    base_h = (1.0 - est.schedule.eps) / base_steps

    results = {k: np.empty(taus.shape) for k in ks}
    tau_prev = 1.0
    for gi, tau_g in enumerate(taus):
        if tau_g < tau_prev:
            lo = tau_g
            n_sub = _stability_substeps(est.schedule, tau_prev, lo, base_h)
            grid = np.linspace(tau_prev, lo, n_sub + 1)
            for i in range(n_sub):
                tau = grid[i]
                h = grid[i] - grid[i + 1]
                s = score_from_net(est.net, tau, x, y_rep, est.schedule, est._dscale)
                if isinstance(est.schedule, VPSchedule):
                    g2 = float(est.schedule.gamma(tau))
                    drift = g2 * (0.5 * x + s)
                else:
                    g2 = (2.0 * np.log(est.schedule.phi1 / est.schedule.phi0)
                          * float(est.schedule.phi(tau)) ** 2)
                    drift = g2 * s
                x = x + h * drift + np.sqrt(g2 * h) * rng.standard_normal(x.shape)
                if not np.isfinite(x).all():
                    raise EstimatorError(
                        f"non-finite state during reverse integration at tau={grid[i + 1]:.6g}"
                    )
            tau_prev = tau_g
        singles = est.estimate_single(y_rep, x, tau=tau_g).reshape(k_max, n, d)
        for k in ks:
            groups = singles.reshape(k_max // k, k, n, d).mean(axis=1)
            err = ((groups - mu_true[None, :, :]) ** 2).sum(axis=2)
            results[k][gi] = err.mean()
    # taus were walked descending; report ascending
    return {k: results[k][::-1].copy() for k in ks}
