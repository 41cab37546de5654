"""Forward noising schedules: variance-preserving and variance-exploding.

VP transition kernel: q_tau(x | x0) = N(beta_tau x0, sigma_tau^2 I) with
beta_tau = exp(-0.25 tau^2 (g1 - g0) - 0.5 tau g0) and
sigma_tau^2 = 1 - beta_tau^2. VE kernel: N(x0, phi_tau^2 I) with
phi_tau = phi0 (phi1/phi0)^tau. The floor eps > 0 guards the vanishing
noise limit where the training and estimation targets explode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScheduleError(Exception):
    pass


def vp_coeffs(tau, gamma0: float, gamma1: float):
    """Closed-form (beta_tau, sigma_tau) of the VP kernel."""
    tau = np.asarray(tau, dtype=np.float64)
    beta = np.exp(-0.25 * tau**2 * (gamma1 - gamma0) - 0.5 * tau * gamma0)
    sigma = np.sqrt(np.maximum(1.0 - beta**2, 0.0))
    return beta, sigma


def ve_sigma(tau, phi0: float, phi1: float):
    """Geometric noise level phi_tau = phi0 (phi1/phi0)^tau."""
    tau = np.asarray(tau, dtype=np.float64)
    return phi0 * (phi1 / phi0) ** tau


@dataclass(frozen=True)
class VPSchedule:
    gamma0: float = 0.0
    gamma1: float = 20.0
    eps: float = 1e-3

    kind = "vp"

    def __post_init__(self):
        if not (0.0 <= self.gamma0 <= self.gamma1):
            raise ScheduleError("VP schedule requires 0 <= gamma0 <= gamma1")
        if self.eps <= 0:
            raise ScheduleError("eps must be positive")
        _, sigma_eps = vp_coeffs(self.eps, self.gamma0, self.gamma1)
        if sigma_eps <= 0:
            raise ScheduleError("sigma at eps must be positive")

    def gamma(self, tau):
        tau = np.asarray(tau, dtype=np.float64)
        return self.gamma0 + tau * (self.gamma1 - self.gamma0)

    def coeff_pair(self, tau):
        """(beta, sigma) of the Gaussian kernel N(beta x0, sigma^2 I)."""
        return vp_coeffs(tau, self.gamma0, self.gamma1)


@dataclass(frozen=True)
class VESchedule:
    phi0: float = 0.03
    phi1: float = 1.0
    eps: float = 6.5e-2

    kind = "ve"

    def __post_init__(self):
        if not (0.0 < self.phi0 < self.phi1):
            raise ScheduleError("VE schedule requires 0 < phi0 < phi1")
        if self.eps <= 0:
            raise ScheduleError("eps must be positive")

    def phi(self, tau):
        return ve_sigma(tau, self.phi0, self.phi1)

    def coeff_pair(self, tau):
        """(beta, sigma) of the Gaussian kernel; beta = 1 for VE."""
        tau = np.asarray(tau, dtype=np.float64)
        return np.ones_like(tau), self.phi(tau)


def vesde_matched() -> VESchedule:
    """VE variant matching the VP maximum marginal variance (phi1 = 1)."""
    return VESchedule(phi0=0.03, phi1=1.0, eps=6.5e-2)


def vesde_larger() -> VESchedule:
    """VE variant with larger maximum marginal noise (phi1 = 15)."""
    return VESchedule(phi0=0.03, phi1=15.0, eps=5e-2)


def forward_sample(x0: np.ndarray, tau, schedule, rng: np.random.Generator) -> np.ndarray:
    """Draw x_tau ~ q_tau(. | x0); tau may be scalar or per-row (N, 1).

    tau below the schedule floor is an error (target explosion guard).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau < schedule.eps):
        raise ScheduleError(
            f"tau below schedule floor eps={schedule.eps}; the denoising target explodes"
        )
    if np.any(tau > 1.0):
        raise ScheduleError("tau must lie in [eps, 1]")
    beta, sigma = schedule.coeff_pair(tau)
    xi = rng.standard_normal(x0.shape)
    return beta * x0 + sigma * xi
