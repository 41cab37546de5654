"""Drift-function zoo, Euler-Maruyama simulation, and increment datasets.

The data model: I i.i.d. trajectories of dY = mu(Y) dt + sigma dB,
observed on a uniform grid of J steps of size delta (states include t=0,
so the array is I x (J+1) x D). Increment pairs (Y, Z) pool all (i, j)
by time-homogeneity.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ioutil import fmt

DRIFT_FAMILIES = ("mu1", "mu2", "mu3", "mu4", "mu5", "mu_sin25", "mu_bipot")


class SimulationError(Exception):
    pass


class DatasetFormatError(Exception):
    pass


@dataclass(frozen=True)
class DriftSpec:
    """Tagged description of a drift family with its parameters.

    Families: mu1/mu2/mu3/mu_sin25 are scalar (D=1); mu4 is the coupled
    bistable potential (D>=3); mu_bipot its separable core (any D);
    mu5 is Lorenz-96 (D>=4, indices modulo D).
    """

    family: str
    dim: int = 1
    a: tuple[float, ...] | float = 0.25
    b: tuple[float, ...] | float = -0.5
    coupling: float = 0.0
    forcing: float = 8.0

    def __post_init__(self):
        if self.family not in DRIFT_FAMILIES:
            raise ValueError(f"unknown drift family {self.family!r}")
        if self.family in ("mu1", "mu2", "mu3", "mu_sin25") and self.dim != 1:
            raise ValueError(f"{self.family} requires dim=1, got {self.dim}")
        if self.family == "mu4" and self.dim < 3:
            raise ValueError("mu4 requires dim>=3 (neighbour coupling)")
        if self.family == "mu5" and self.dim < 4:
            raise ValueError("mu5 requires dim>=4 (modular indexing)")
        if self.family in ("mu4", "mu_bipot"):
            a = self._coef(self.a)
            b = self._coef(self.b)
            if np.any(a <= 0) or np.any(b >= 0):
                raise ValueError("mu4/mu_bipot require a_d > 0 and b_d < 0")
            if self.coupling < 0:
                raise ValueError("coupling c must be >= 0")
        if self.family == "mu5" and self.forcing <= 0:
            raise ValueError("mu5 requires forcing F > 0")

    def _coef(self, value) -> np.ndarray:
        arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
        if arr.size == 1:
            arr = np.full(self.dim, arr[0])
        if arr.size != self.dim:
            raise ValueError(f"coefficient length {arr.size} != dim {self.dim}")
        return arr

    @property
    def wells(self) -> np.ndarray:
        """Well locations y*_d = sqrt(-b_d / (2 a_d)) for the bistable families."""
        a = self._coef(self.a)
        b = self._coef(self.b)
        return np.sqrt(-b / (2.0 * a))

    def __call__(self, y: np.ndarray) -> np.ndarray:
        return drift_eval(self, y)


def _bistable_core(spec: DriftSpec, y: np.ndarray) -> np.ndarray:
    a = spec._coef(spec.a)
    b = spec._coef(spec.b)
    return -4.0 * a * y**3 - 2.0 * b * y


def drift_eval(spec: DriftSpec, y: np.ndarray) -> np.ndarray:
    """Exact closed-form drift value; accepts (D,) or (N, D) states."""
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    ys = y[None, :] if single else y
    if ys.shape[-1] != spec.dim:
        raise ValueError(f"state dimension {ys.shape[-1]} != spec dim {spec.dim}")
    fam = spec.family
    if fam == "mu1":
        out = -np.sin(2.0 * ys) * np.log(1.0 + 5.0 * np.abs(ys))
    elif fam in ("mu2", "mu_sin25"):
        out = -ys + np.sin(25.0 * ys)
    elif fam == "mu3":
        out = -(ys**3) + ys
    elif fam == "mu_bipot":
        out = _bistable_core(spec, ys)
    elif fam == "mu4":
        out = _bistable_core(spec, ys)
        c = spec.coupling
        if c > 0:
            wells2 = spec.wells**2
            s2 = c * wells2  # s_d = sqrt(c) * y*_d
            psi = np.exp(-((ys**2 - wells2) ** 2) / (2.0 * s2))
            dpsi = -2.0 * ys * (ys**2 - wells2) / s2 * psi
            # non-periodic ends drop the missing neighbour term
            nb = np.zeros_like(ys)
            nb[:, 1:] += psi[:, :-1]
            nb[:, :-1] += psi[:, 1:]
            out = out - 0.5 * c * dpsi * nb
    elif fam == "mu5":
        d = spec.dim
        idx = np.arange(d)
        out = (ys[:, (idx + 1) % d] - ys[:, (idx - 2) % d]) * ys[:, (idx - 1) % d] - ys + spec.forcing
    else:  # pragma: no cover
        raise ValueError(fam)
    return out[0] if single else out


def default_initial_sampler(spec: DriftSpec):
    """Q0 = N(0, I) except Lorenz-96, which starts near the attractor."""
    if spec.family == "mu5":
        offset = spec.forcing

        def q0(rng: np.random.Generator, n: int) -> np.ndarray:
            return offset + rng.standard_normal((n, spec.dim))

        return q0

    def q0(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, spec.dim))

    return q0


@dataclass
class TrajectoryDataset:
    states: np.ndarray  # (I, J+1, D), includes t0
    delta: float
    sigma: float
    seed: int

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    @property
    def horizon(self) -> float:
        return self.n_steps * self.delta


@dataclass
class IncrementPairs:
    y: np.ndarray  # (N, D) states
    z: np.ndarray  # (N, D) increments Z = Y_{t_{j+1}} - Y_{t_j}
    delta: float

    def __len__(self) -> int:
        return self.y.shape[0]


def _trajectory_rngs(seed: int, n_paths: int) -> list[np.random.Generator]:
    """One splittable stream per trajectory, derived from the dataset seed."""
    children = np.random.SeedSequence(seed).spawn(n_paths)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def simulate(
    drift,
    sigma: float,
    n_paths: int,
    n_steps: int,
    delta: float,
    seed: int,
    q0=None,
    threads: int = 1,
) -> TrajectoryDataset:
    """Euler-Maruyama simulation of I i.i.d. trajectories.

    ``drift`` is a DriftSpec or any callable mapping (N, D) -> (N, D).
    Per-trajectory RNG streams are spawned from ``seed``, so results are
    independent of thread count and chunking.
    """
    if delta <= 0 or n_paths < 1 or n_steps < 1:
        raise ValueError("simulate requires delta > 0, n_paths >= 1, n_steps >= 1")
    if isinstance(drift, DriftSpec):
        dim = drift.dim
        mu = drift
        if q0 is None:
            q0 = default_initial_sampler(drift)
    else:
        mu = drift
        if q0 is None:
            raise ValueError("a q0 sampler is required for callable drifts")
        dim = None

    rngs = _trajectory_rngs(seed, n_paths)
    y0 = np.stack([q0(rngs[i], 1)[0] for i in range(n_paths)], axis=0)
    dim = y0.shape[1] if dim is None else dim
    states = np.empty((n_paths, n_steps + 1, dim))
    states[:, 0, :] = y0
    noise = np.empty((n_paths, n_steps, dim))
    for i in range(n_paths):
        noise[i] = rngs[i].standard_normal((n_steps, dim))

    sqrt_dt = np.sqrt(delta)

    def run_chunk(lo: int, hi: int) -> None:
        y = states[lo:hi, 0, :].copy()
        for j in range(n_steps):
            y = y + mu(y) * delta + sigma * sqrt_dt * noise[lo:hi, j, :]
            if not np.isfinite(y).all():
                bad = np.argwhere(~np.isfinite(y).all(axis=1))[0, 0]
                raise SimulationError(
                    f"non-finite state in trajectory {lo + bad} at step {j + 1}"
                )
            states[lo:hi, j + 1, :] = y

    threads = max(1, int(threads))
    if threads == 1 or n_paths < 2 * threads:
        run_chunk(0, n_paths)
    else:
        bounds = np.linspace(0, n_paths, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(run_chunk, int(lo), int(hi))
                for lo, hi in zip(bounds[:-1], bounds[1:])
                if hi > lo
            ]
            for fut in futures:
                fut.result()
    return TrajectoryDataset(states=states, delta=delta, sigma=sigma, seed=seed)


def make_increments(ds: TrajectoryDataset) -> IncrementPairs:
    """Pool (Y_{t_j}, Z_{t_j}) pairs across trajectories and steps."""
    y = ds.states[:, :-1, :]
    z = np.diff(ds.states, axis=1)
    n = ds.n_paths * ds.n_steps
    return IncrementPairs(
        y=y.reshape(n, ds.dim).copy(), z=z.reshape(n, ds.dim).copy(), delta=ds.delta
    )


# -- dataset file format ------------------------------------------------------

DATASET_MAGIC = b"SDDS1"
DATASET_VERSION = 1


def save_dataset(path, ds: TrajectoryDataset) -> None:
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<B", DATASET_VERSION))
        fh.write(struct.pack("<QQQ", ds.n_paths, ds.n_steps, ds.dim))
        fh.write(struct.pack("<dd", ds.delta, ds.sigma))
        fh.write(struct.pack("<Q", ds.seed))
        fh.write(np.ascontiguousarray(ds.states, dtype="<f8").tobytes())


def load_dataset(path) -> TrajectoryDataset:
    raw = Path(path).read_bytes()
    if raw[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: not a dataset file")
    off = len(DATASET_MAGIC)
    (version,) = struct.unpack_from("<B", raw, off)
    off += 1
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    try:
        n_paths, n_steps, dim = struct.unpack_from("<QQQ", raw, off)
        off += 24
        delta, sigma = struct.unpack_from("<dd", raw, off)
        off += 16
        (seed,) = struct.unpack_from("<Q", raw, off)
        off += 8
    except struct.error as exc:
        raise DatasetFormatError(f"{path}: truncated header") from exc
    n = n_paths * (n_steps + 1) * dim
    payload = raw[off:]
    if len(payload) < 8 * n:
        raise DatasetFormatError(f"{path}: truncated payload")
    states = np.frombuffer(payload[: 8 * n], dtype="<f8").reshape(
        n_paths, n_steps + 1, dim
    ).copy()
    return TrajectoryDataset(states=states, delta=delta, sigma=sigma, seed=seed)


def export_csv(path, ds: TrajectoryDataset, header_comment: str | None = None) -> None:
    """One row per (i, j): columns i, j, t, Y_1 ... Y_D."""
    dim = ds.dim
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        cols = ",".join(f"Y{d + 1}" for d in range(dim))
        fh.write(f"i,j,t,{cols}\n")
        for i in range(ds.n_paths):
            for j in range(ds.n_steps + 1):
                vals = ",".join(fmt(v) for v in ds.states[i, j])
                fh.write(f"{i},{j},{fmt(j * ds.delta)},{vals}\n")
