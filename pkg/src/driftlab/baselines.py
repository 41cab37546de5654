"""Classical nonparametric drift estimators for i.i.d. trajectories.

Three baselines: the trajectory-averaged Nadaraya-Watson kernel
estimator (with leave-one-trajectory-out CV for the bandwidth and an
optional density truncation), a ridge-regularised B-spline least-squares
estimator with a norm-budget constraint, and a Hermite-function
projection estimator with a penalised dimension selector. Ridge and
Hermite are one-dimensional; their storage and data requirements grow
exponentially with the state dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .sde import TrajectoryDataset


class BaselineError(Exception):
    pass


class DomainError(BaselineError):
    pass


# -- Nadaraya-Watson -----------------------------------------------------------


def _kernel_prefactor(h: float, dim: int) -> float:
    return (2.0 * np.pi * h ** (2 * dim)) ** -0.5


@dataclass
class NWEstimator:
    """Kernel ratio estimator averaged over trajectories.

    b(y) = [ (1/I) sum K_h(Y - y) Z ] / [ T (1/(J I)) sum K_h(Y - y) ],
    truncated to zero wherever the density estimate is <= m/2.
    """

    y: np.ndarray        # (I, J, D) states at t_0..t_{J-1}
    z: np.ndarray        # (I, J, D) increments
    bandwidth: float
    delta: float
    horizon: float
    trunc: float = 0.0   # m, the density lower bound; 0 disables truncation

    @classmethod
    def from_dataset(cls, ds: TrajectoryDataset, bandwidth: float,
                     trunc: float = 0.0) -> "NWEstimator":
        return cls(
            y=ds.states[:, :-1, :].copy(),
            z=np.diff(ds.states, axis=1),
            bandwidth=float(bandwidth),
            delta=ds.delta,
            horizon=ds.horizon,
            trunc=float(trunc),
        )

    @property
    def dim(self) -> int:
        return self.y.shape[2]

    def _sums(self, query: np.ndarray, skip_path: int | None = None,
              chunk: int = 512):
        """Kernel mass and kernel-weighted increment sums at each query row."""
        n_i, n_j, d = self.y.shape
        ys = self.y.reshape(n_i * n_j, d)
        zs = self.z.reshape(n_i * n_j, d)
        if skip_path is not None:
            keep = np.repeat(np.arange(n_i) != skip_path, n_j)
            ys, zs = ys[keep], zs[keep]
        h2 = self.bandwidth**2
        pref = _kernel_prefactor(self.bandwidth, d)
        mass = np.empty(query.shape[0])
        wz = np.empty_like(query)
        for lo in range(0, query.shape[0], chunk):
            q = query[lo : lo + chunk]
            d2 = ((q[:, None, :] - ys[None, :, :]) ** 2).sum(axis=2)
            w = pref * np.exp(-0.5 * d2 / h2)
            mass[lo : lo + chunk] = w.sum(axis=1)
            wz[lo : lo + chunk] = w @ zs
        return mass, wz

    def estimate_with_flags(self, query: np.ndarray, skip_path: int | None = None):
        """Estimates plus a mask of truncated (zeroed) query points."""
        query = np.atleast_2d(np.asarray(query, dtype=np.float64))
        if query.shape[1] != self.dim:
            raise BaselineError(f"query dimension {query.shape[1]} != data dimension {self.dim}")
        n_i, n_j, _ = self.y.shape
        paths = n_i - (1 if skip_path is not None else 0)
        mass, wz = self._sums(query, skip_path=skip_path)
        density = mass / (n_j * paths)
        numer = wz / paths
        truncated = density <= self.trunc / 2.0
        out = np.zeros_like(query)
        ok = ~truncated
        out[ok] = numer[ok] / (self.horizon * density[ok, None])
        return out, truncated

    def estimate(self, query: np.ndarray, rng=None) -> np.ndarray:
        return self.estimate_with_flags(query)[0]


def nw_cv_score(ds: TrajectoryDataset, bandwidth: float, trunc: float = 0.0) -> float:
    """Leave-one-trajectory-out CV criterion
    sum_{i,j} [ b^{-(i)}(Y)^2 Delta - 2 b^{-(i)}(Y) (Y_{t_{j+1}} - Y_{t_j}) ]."""
    if ds.n_paths < 2:
        raise BaselineError("leave-one-out CV needs at least 2 trajectories")
    est = NWEstimator.from_dataset(ds, bandwidth, trunc=trunc)
    total = 0.0
    for i in range(ds.n_paths):
        pred, _ = est.estimate_with_flags(est.y[i], skip_path=i)
        z_i = est.z[i]
        total += float(((pred**2).sum(axis=1) * ds.delta).sum()
                       - 2.0 * (pred * z_i).sum())
    return total


def nw_select_bandwidth(ds: TrajectoryDataset, grid, method: str = "cv",
                        score=None, trunc: float = 0.0):
    """Bandwidth minimising LOO-CV, or an external score ("oracle" mode).

    Returns (best bandwidth, [(h, value), ...] trace in grid order).
    """
    grid = list(grid)
    if not grid:
        raise BaselineError("bandwidth grid is empty")
    trace = []
    for h in grid:
        if method == "cv":
            val = nw_cv_score(ds, h, trunc=trunc)
        elif method == "oracle":
            if score is None:
                raise BaselineError("oracle selection needs a score callable")
            val = float(score(NWEstimator.from_dataset(ds, h, trunc=trunc)))
        else:
            raise BaselineError(f"unknown selection method {method!r}")
        trace.append((float(h), val))
    best = min(trace, key=lambda t: t[1])[0]
    return best, trace


# -- Ridge B-spline -------------------------------------------------------------


def spline_knots(degree: int, n_interior: int, lo: float, hi: float) -> np.ndarray:
    """Clamped knot vector: degree+1 copies of each endpoint, uniform interior."""
    interior = lo + np.arange(1, n_interior) / n_interior * (hi - lo)
    return np.concatenate([np.full(degree + 1, lo), interior, np.full(degree + 1, hi)])


def spline_design(y: np.ndarray, knots: np.ndarray, degree: int) -> np.ndarray:
    return BSpline.design_matrix(y, knots, degree, extrapolate=False).toarray()


@dataclass
class RidgeEstimator:
    """B-spline least squares with a coefficient norm budget.

    The fitted function is sum_s a_s B_{s,M,u}(y) on [lo, hi]; evaluating
    outside the domain is an error unless clamp_domain is set.
    """

    degree: int
    n_interior: int
    lo: float
    hi: float
    budget_scale: float     # L_I; the budget is (K_I + M) L_I
    knots: np.ndarray
    coef: np.ndarray
    lam: float
    clamp_domain: bool = False

    @property
    def n_basis(self) -> int:
        return self.n_interior + self.degree

    def estimate(self, query: np.ndarray, rng=None) -> np.ndarray:
        query = np.atleast_2d(np.asarray(query, dtype=np.float64))
        if query.shape[1] != 1:
            raise BaselineError("ridge B-spline estimator is one-dimensional")
        q = query[:, 0]
        if self.clamp_domain:
            q = np.clip(q, self.lo, self.hi)
        elif np.any(q < self.lo) or np.any(q > self.hi):
            raise DomainError(
                f"query outside the fitted domain [{self.lo:.6g}, {self.hi:.6g}]"
            )
        design = spline_design(q, self.knots, self.degree)
        return (design @ self.coef)[:, None]


def _quantile_domain(y: np.ndarray) -> tuple[float, float]:
    """Symmetric domain from the 0.5%/99.5% quantiles."""
    lo, hi = np.quantile(y, [0.005, 0.995])
    b = max(abs(lo), abs(hi))
    return -b, b


def ridge_fit(ds: TrajectoryDataset, degree: int = 3, n_interior: int = 10,
              budget_scale: float = 10.0, domain: tuple[float, float] | None = None,
              clamp_domain: bool = False) -> RidgeEstimator:
    """Fit the spline coefficients; ridge only when the norm budget binds.

    Unconstrained least squares is used when B'B is full rank and the
    solution lies within the budget; otherwise the ridge parameter is the
    root of ||a(lambda)||^2 = (K_I + M) L_I, found by bisection.
    """
    if ds.dim != 1:
        raise BaselineError("ridge B-spline estimator is one-dimensional")
    y = ds.states[:, :-1, 0].ravel()
    z = np.diff(ds.states[:, :, 0], axis=1).ravel() / ds.delta
    lo, hi = domain if domain is not None else _quantile_domain(y)
    inside = (y >= lo) & (y <= hi)
    y, z = y[inside], z[inside]
    knots = spline_knots(degree, n_interior, lo, hi)
    design = spline_design(y, knots, degree)
    n_basis = n_interior + degree
    budget = n_basis * budget_scale

    gram = design.T @ design
    rhs = design.T @ z
    evals, evecs = np.linalg.eigh(gram)
    c = evecs.T @ rhs

    def coef_norm2(lam: float) -> float:
        denom = evals + lam
        good = denom > 0
        if not np.all(good) and np.any(np.abs(c[~good]) > 0):
            return np.inf
        return float(((c[good] / denom[good]) ** 2).sum())

    rank_ok = evals.min() > max(evals.max(), 1.0) * 1e-12
    if rank_ok and coef_norm2(0.0) <= budget:
        coef = evecs @ (c / evals)
        lam = 0.0
    else:
        lam_hi = 1.0
        while coef_norm2(lam_hi) > budget:
            lam_hi *= 2.0
        lam_lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lam_lo + lam_hi)
            if coef_norm2(mid) > budget:
                lam_lo = mid
            else:
                lam_hi = mid
            if abs(coef_norm2(lam_hi) - budget) <= 1e-8 * budget:
                break
        lam = lam_hi
        coef = evecs @ (c / (evals + lam))
    return RidgeEstimator(degree=degree, n_interior=n_interior, lo=lo, hi=hi,
                          budget_scale=budget_scale, knots=knots, coef=coef,
                          lam=lam, clamp_domain=clamp_domain)


def ridge_select(ds: TrajectoryDataset, interior_grid, budget_grid, score,
                 degree: int = 3, clamp_domain: bool = False):
    """Joint oracle grid search over (K_I, L_I). Returns (best pair, trace)."""
    trace = []
    for k_i in interior_grid:
        for l_i in budget_grid:
            est = ridge_fit(ds, degree=degree, n_interior=int(k_i),
                            budget_scale=float(l_i), clamp_domain=clamp_domain)
            trace.append(((int(k_i), float(l_i)), float(score(est))))
    if not trace:
        raise BaselineError("empty ridge hyperparameter grid")
    best = min(trace, key=lambda t: t[1])[0]
    return best, trace


# -- Hermite projection ----------------------------------------------------------


def hermite_functions(y: np.ndarray, m: int) -> np.ndarray:
    """First m orthonormal Hermite functions h_k(y), shape (len(y), m).

    h_k(y) = (2^k k! sqrt(pi))^{-1/2} H_k(y) exp(-y^2/2), evaluated by the
    stable recurrence h_{k+1} = sqrt(2/(k+1)) y h_k - sqrt(k/(k+1)) h_{k-1}.
    """
    y = np.asarray(y, dtype=np.float64)
    out = np.empty((y.size, m))
    out[:, 0] = np.pi**-0.25 * np.exp(-0.5 * y**2)
    if m > 1:
        out[:, 1] = np.sqrt(2.0) * y * out[:, 0]
    for k in range(1, m - 1):
        out[:, k + 1] = (np.sqrt(2.0 / (k + 1)) * y * out[:, k]
                         - np.sqrt(k / (k + 1.0)) * out[:, k - 1])
    return out


def operator_norm(mat: np.ndarray, iters: int = 50, tol: float = 1e-8) -> float:
    """Largest singular value by power iteration on A'A."""
    n = mat.shape[1]
    v = np.ones(n) / np.sqrt(n)
    prev = 0.0
    for _ in range(iters):
        w = mat.T @ (mat @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        cur = np.sqrt(norm)
        if abs(cur - prev) <= tol * max(1.0, cur):
            break
        prev = cur
    return float(np.sqrt(v @ (mat.T @ (mat @ v))))


@dataclass
class HermiteEstimator:
    """Least-squares projection of the drift on a Hermite-function basis."""

    m: int
    theta: np.ndarray
    gram: np.ndarray         # Phi_m
    moments: np.ndarray      # Z_m

    def estimate(self, query: np.ndarray, rng=None) -> np.ndarray:
        query = np.atleast_2d(np.asarray(query, dtype=np.float64))
        if query.shape[1] != 1:
            raise BaselineError("Hermite estimator is one-dimensional")
        basis = hermite_functions(query[:, 0], self.m)
        return (basis @ self.theta)[:, None]

    def empirical_norm2(self) -> float:
        """||b_m||^2 under the empirical measure: theta' Phi theta."""
        return float(self.theta @ self.gram @ self.theta)


def hermite_fit(ds: TrajectoryDataset, m: int,
                cond_limit: float = 1e12) -> HermiteEstimator:
    """Project onto m Hermite functions via the discretised path integrals.

    Phi_{u,v} = (1/(I T)) sum_{i,j} h_v(Y) h_u(Y) Delta and
    Z_u = (1/(I T)) sum_{i,j} h_u(Y) (Y_{t_{j+1}} - Y_{t_j}).
    """
    if ds.dim != 1:
        raise BaselineError("Hermite estimator is one-dimensional")
    if m < 1:
        raise BaselineError("m must be >= 1")
    y = ds.states[:, :-1, 0].ravel()
    dz = np.diff(ds.states[:, :, 0], axis=1).ravel()
    scale = 1.0 / (ds.n_paths * ds.horizon)
    basis = hermite_functions(y, m)
    gram = scale * ds.delta * (basis.T @ basis)
    moments = scale * (basis.T @ dz)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > cond_limit:
        raise BaselineError(
            f"Hermite Gram matrix is numerically singular (cond {cond:.3g}); "
            f"use a smaller m"
        )
    theta = np.linalg.solve(gram, moments)
    return HermiteEstimator(m=m, theta=theta, gram=gram, moments=moments)


def hermite_admissible(ds: TrajectoryDataset, m: int, m_cap: int = 10) -> bool:
    """Membership in the penalised-selection candidate set
    {m : m <= cap, m ||Phi_m^{-1}||_op^{1/4} <= I T}."""
    if m > m_cap:
        return False
    try:
        est = hermite_fit(ds, m)
    except BaselineError:
        return False
    inv_norm = operator_norm(np.linalg.inv(est.gram))
    return m * inv_norm**0.25 <= ds.n_paths * ds.horizon


def hermite_select_m(ds: TrajectoryDataset, candidates, method: str = "penalized",
                     kappa: float = 1.0, sigma: float | None = None,
                     score=None, m_cap: int = 10):
    """Basis size minimising the penalised contrast, or an external score.

    Penalised contrast: -||b_m||^2 + kappa ||Phi_m^{-1} Phi_{m,sigma^2}||_op
    m / (I T), restricted to the admissible set. With constant sigma the
    operator-norm factor reduces to sigma^2 (still computed by power
    iteration on the assembled matrix).
    """
    candidates = sorted(set(int(m) for m in candidates))
    if not candidates:
        raise BaselineError("empty Hermite candidate set")
    trace = []
    if method == "oracle":
        if score is None:
            raise BaselineError("oracle selection needs a score callable")
        for m in candidates:
            try:
                trace.append((m, float(score(hermite_fit(ds, m)))))
            except BaselineError:
                continue
    elif method == "penalized":
        sig = ds.sigma if sigma is None else sigma
        it = ds.n_paths * ds.horizon
        for m in candidates:
            if not hermite_admissible(ds, m, m_cap=m_cap):
                continue
            est = hermite_fit(ds, m)
            gram_sigma = sig**2 * est.gram
            pen = operator_norm(np.linalg.solve(est.gram, gram_sigma))
            trace.append((m, -est.empirical_norm2() + kappa * pen * m / it))
    else:
        raise BaselineError(f"unknown selection method {method!r}")
    if not trace:
        raise BaselineError("no admissible Hermite candidates")
    best = min(trace, key=lambda t: t[1])[0]
    return best, trace
