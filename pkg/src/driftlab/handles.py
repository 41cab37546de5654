"""Self-describing estimator handles.

A fitted estimator serializes to a small INI text file describing its
family, settings, and either inline coefficients (ridge, Hermite), a
dataset reference (Nadaraya-Watson), or an architecture plus checkpoint
file (networks). Loading reconstructs an object with the common
``estimate(y, rng)`` contract.
"""

from __future__ import annotations

import configparser
from pathlib import Path

import numpy as np

from .baselines import HermiteEstimator, NWEstimator, RidgeEstimator, spline_knots
from .checkpoint import load_params, save_params
from .ioutil import fmt
from .estimators import DenoisingEstimator, OracleEstimator, RegressionEstimator
from .nets import ArchSpec, build, get_params, set_params
from .schedules import VESchedule, VPSchedule
from .sde import DriftSpec, load_dataset


class HandleError(Exception):
    pass


def _schedule_section(schedule) -> dict:
    if isinstance(schedule, VPSchedule):
        return {"kind": "vp", "gamma0": schedule.gamma0,
                "gamma1": schedule.gamma1, "eps": schedule.eps}
    return {"kind": "ve", "phi0": schedule.phi0, "phi1": schedule.phi1,
            "eps": schedule.eps}


def _schedule_from(section: dict):
    if section["kind"] == "vp":
        return VPSchedule(gamma0=float(section["gamma0"]),
                          gamma1=float(section["gamma1"]),
                          eps=float(section["eps"]))
    return VESchedule(phi0=float(section["phi0"]), phi1=float(section["phi1"]),
                      eps=float(section["eps"]))


def _arch_section(spec: ArchSpec) -> dict:
    return {
        "kind": spec.kind, "dim": spec.dim, "width_scale": spec.width_scale,
        "n_fourier": spec.n_fourier, "time_embed_dim": spec.time_embed_dim,
        "conv_kernel": spec.conv_kernel, "fc_depth": spec.fc_depth,
        "fc_width": spec.fc_width, "clamp_bound": spec.clamp_bound,
        "prune_fraction": spec.prune_fraction, "prune_every": spec.prune_every,
    }


def _arch_from(section: dict) -> ArchSpec:
    return ArchSpec(
        kind=section["kind"], dim=int(section["dim"]),
        width_scale=float(section["width_scale"]),
        n_fourier=int(section["n_fourier"]),
        time_embed_dim=int(section["time_embed_dim"]),
        conv_kernel=int(section["conv_kernel"]),
        fc_depth=int(section["fc_depth"]), fc_width=int(section["fc_width"]),
        clamp_bound=float(section["clamp_bound"]),
        prune_fraction=float(section["prune_fraction"]),
        prune_every=int(section["prune_every"]),
    )


def _vector(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",") if v.strip()])


def save_handle(path, estimator, arch_spec: ArchSpec | None = None,
                drift_spec: DriftSpec | None = None,
                dataset_path: str | None = None) -> None:
    """Write the .est file (and a sibling .params file for networks)."""
    path = Path(path)
    sections: dict[str, dict] = {}
    if isinstance(estimator, DenoisingEstimator):
        if arch_spec is None:
            raise HandleError("network handles need the architecture spec")
        params_file = path.with_suffix(".params")
        save_params(params_file, get_params(estimator.net))
        sections["estimator"] = {
            "kind": "dn_family", "delta": estimator.delta, "k": estimator.k,
            "tau": estimator.tau, "target_scale": estimator.target_scale,
            "reverse_steps": estimator.reverse_steps,
            "params": params_file.name,
        }
        sections["arch"] = _arch_section(arch_spec)
        sections["schedule"] = _schedule_section(estimator.schedule)
    elif isinstance(estimator, RegressionEstimator):
        if arch_spec is None:
            raise HandleError("network handles need the architecture spec")
        params_file = path.with_suffix(".params")
        save_params(params_file, get_params(estimator.net))
        sections["estimator"] = {
            "kind": "regression", "delta": estimator.delta,
            "target_scale": estimator.target_scale, "params": params_file.name,
        }
        sections["arch"] = _arch_section(arch_spec)
    elif isinstance(estimator, NWEstimator):
        if dataset_path is None:
            raise HandleError("NW handles need the fitted dataset path")
        sections["estimator"] = {
            "kind": "nw", "bandwidth": estimator.bandwidth,
            "trunc": estimator.trunc, "dataset": dataset_path,
        }
    elif isinstance(estimator, RidgeEstimator):
        sections["estimator"] = {
            "kind": "ridge", "degree": estimator.degree,
            "n_interior": estimator.n_interior, "lo": estimator.lo,
            "hi": estimator.hi, "budget_scale": estimator.budget_scale,
            "lam": estimator.lam, "clamp_domain": estimator.clamp_domain,
            "coef": ",".join(fmt(c) for c in estimator.coef),
        }
    elif isinstance(estimator, HermiteEstimator):
        sections["estimator"] = {
            "kind": "hermite", "m": estimator.m,
            "theta": ",".join(fmt(c) for c in estimator.theta),
            "gram": ";".join(",".join(fmt(v) for v in row)
                             for row in estimator.gram),
            "moments": ",".join(fmt(v) for v in estimator.moments),
        }
    elif isinstance(estimator, OracleEstimator):
        drift = drift_spec or (estimator.drift if isinstance(estimator.drift, DriftSpec) else None)
        if drift is None:
            raise HandleError("oracle handles need a DriftSpec")
        sections["estimator"] = {
            "kind": "oracle", "family": drift.family, "dim": drift.dim,
            "well_a": drift.a if np.isscalar(drift.a) else ",".join(map(fmt, drift.a)),
            "well_b": drift.b if np.isscalar(drift.b) else ",".join(map(fmt, drift.b)),
            "coupling": drift.coupling, "forcing": drift.forcing,
        }
    else:
        raise HandleError(f"cannot serialize estimator {type(estimator).__name__}")

    parser = configparser.ConfigParser(interpolation=None)
    for name, mapping in sections.items():
        parser[name] = {k: str(v) for k, v in mapping.items()}
    with open(path, "w") as fh:
        parser.write(fh)


def load_handle(path):
    """Reconstruct an estimator from its .est file."""
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    if not parser.read(path):
        raise HandleError(f"handle file not found: {path}")
    if "estimator" not in parser:
        raise HandleError(f"{path}: missing [estimator] section")
    est = dict(parser["estimator"])
    kind = est.get("kind")
    if kind == "dn_family":
        arch = _arch_from(dict(parser["arch"]))
        schedule = _schedule_from(dict(parser["schedule"]))
        net = build(arch, seed=0)
        set_params(net, load_params(path.parent / est["params"]))
        return DenoisingEstimator(
            net, schedule, float(est["delta"]), k=int(est["k"]),
            tau=float(est["tau"]), target_scale=est["target_scale"],
            reverse_steps=int(est["reverse_steps"]))
    if kind == "regression":
        arch = _arch_from(dict(parser["arch"]))
        net = build(arch, seed=0)
        set_params(net, load_params(path.parent / est["params"]))
        return RegressionEstimator(net, float(est["delta"]),
                                   target_scale=est["target_scale"])
    if kind == "nw":
        ds = load_dataset(path.parent / est["dataset"])
        return NWEstimator.from_dataset(ds, float(est["bandwidth"]),
                                        trunc=float(est["trunc"]))
    if kind == "ridge":
        degree = int(est["degree"])
        n_interior = int(est["n_interior"])
        lo, hi = float(est["lo"]), float(est["hi"])
        return RidgeEstimator(
            degree=degree, n_interior=n_interior, lo=lo, hi=hi,
            budget_scale=float(est["budget_scale"]),
            knots=spline_knots(degree, n_interior, lo, hi),
            coef=_vector(est["coef"]), lam=float(est["lam"]),
            clamp_domain=est["clamp_domain"] == "True")
    if kind == "hermite":
        m = int(est["m"])
        gram = np.array([[float(v) for v in row.split(",")]
                         for row in est["gram"].split(";")])
        return HermiteEstimator(m=m, theta=_vector(est["theta"]), gram=gram,
                                moments=_vector(est["moments"]))
    if kind == "oracle":
        def coefs(text):
            return tuple(float(v) for v in text.split(",")) if "," in text \
                else float(text)

        return OracleEstimator(DriftSpec(
            family=est["family"], dim=int(est["dim"]),
            a=coefs(est["well_a"]), b=coefs(est["well_b"]),
            coupling=float(est["coupling"]), forcing=float(est["forcing"])))
    raise HandleError(f"{path}: unknown estimator kind {kind!r}")
