"""Experiment configuration: INI-style text with one section per module.

Unknown sections or keys are errors (fail-fast reproducibility). Values
accept fractions ("1/256") where grid steps are involved. A preset
("desk" or "full") supplies scale defaults; explicit keys override it.
The resolved configuration has a stable hash that output files embed.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass

from .nets import ArchSpec
from .schedules import VESchedule, VPSchedule
from .sde import DriftSpec


class ConfigError(Exception):
    pass


def parse_number(text: str) -> float:
    """Float literal or a fraction like 1/256."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _parse_list(text: str, conv):
    return [conv(part) for part in text.split(",") if part.strip()]


def _parse_int_range(text: str) -> list[int]:
    """Comma list of ints, where an element may be a lo..hi range."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _parse_bool(text: str) -> bool:
    val = text.strip().lower()
    if val in ("true", "yes", "1", "on"):
        return True
    if val in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


# section -> key -> (converter, default). Presets overlay the defaults.
_SCHEMA: dict[str, dict[str, tuple]] = {
    "experiment": {
        "name": (str, "experiment"),
        "drift": (str, "mu3"),
        "dimension": (int, 1),
        "coupling": (parse_number, 0.0),
        "forcing": (parse_number, 8.0),
        "well_a": (parse_number, 0.25),
        "well_b": (parse_number, -0.5),
        "sigma": (parse_number, 1.0),
        "delta": (lambda s: _parse_list(s, parse_number), [1.0 / 256.0]),
        "train_paths": (lambda s: _parse_list(s, int), [200]),
        "train_horizon": (parse_number, 1.0),
        "eval_paths": (int, 100),
        "oos_horizon": (parse_number, 5.0),
        "heldout_paths": (int, 50),
        "seed": (int, 0),
        "roster": (lambda s: _parse_list(s, str.strip), ["dn", "oracle"]),
        "validation": (str, "oracle"),
        "preset": (str, "desk"),
    },
    "train": {
        "epochs": (int, 300),
        "batch_size": (int, 256),
        "lr": (parse_number, 1e-2),
        "patience": (int, 100),
        "target_scale": (str, "inverse_delta"),
        "val_k": (int, 10),
        "val_stride": (int, 4),
    },
    "schedule": {
        "kind": (str, "vp"),
        "gamma0": (parse_number, 0.0),
        "gamma1": (parse_number, 20.0),
        "eps": (parse_number, 1e-3),
        "phi0": (parse_number, 0.03),
        "phi1": (parse_number, 1.0),
    },
    "net": {
        "width_scale": (parse_number, 0.5),
        "n_fourier": (int, 8),
        "time_embed_dim": (int, 32),
        "conv_kernel": (int, 5),
        "fc_depth": (int, 4),
        "fc_width": (int, 128),
        "clamp_bound": (parse_number, 5.0),
        "prune_every": (int, 50),
        "prune_fraction": (parse_number, 0.2),
    },
    "estimate": {
        "k": (int, 100),
        "tau": (parse_number, 1.0),
        "reverse_steps": (int, 500),
    },
    "sweep": {
        "n_taus": (int, 40),
        "n_points": (int, 100),
        "ks": (lambda s: _parse_list(s, int), [1, 10, 100]),
        "base_steps": (int, 500),
    },
    "nw": {
        "bandwidths": (lambda s: _parse_list(s, parse_number),
                       [0.05, 0.1, 0.2, 0.4, 0.8]),
        "selection": (str, "oracle"),
        "trunc": (parse_number, 0.0),
    },
    "ridge": {
        "degree": (int, 3),
        "interior": (lambda s: _parse_list(s, int), [4, 8, 16, 32]),
        "budgets": (lambda s: _parse_list(s, parse_number), [1.0, 10.0, 100.0]),
        "clamp_domain": (_parse_bool, True),
    },
    "hermite": {
        "candidates": (_parse_int_range, list(range(1, 16))),
        "selection": (str, "oracle"),
        "kappa": (parse_number, 1.0),
    },
}

_PRESETS = {
    "desk": {},  # the schema defaults are the desk preset
    "full": {
        ("experiment", "train_paths"): [1000],
        ("experiment", "eval_paths"): 1000,
        ("experiment", "oos_horizon"): 20.0,
        ("train", "epochs"): 100000,
        ("train", "val_stride"): 1,
        ("net", "width_scale"): 1.0,
        ("estimate", "reverse_steps"): 10000,
        ("sweep", "base_steps"): 10000,
    },
}

_ROSTER_KINDS = ("dn", "dn_lin", "fc", "fc_plus", "fc_plus_conv",
                 "fc_plus_conv_mlpsm", "nw", "ridge", "hermite", "oracle")
_NET_KINDS = _ROSTER_KINDS[:6]


@dataclass
class ExperimentSpec:
    values: dict[str, dict[str, object]]
    config_hash: str

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    @property
    def name(self) -> str:
        return self.values["experiment"]["name"]

    @property
    def seed(self) -> int:
        return self.values["experiment"]["seed"]

    @property
    def roster(self) -> list[str]:
        return self.values["experiment"]["roster"]

    def drift_spec(self) -> DriftSpec:
        exp = self.values["experiment"]
        return DriftSpec(
            family=exp["drift"],
            dim=exp["dimension"],
            a=exp["well_a"],
            b=exp["well_b"],
            coupling=exp["coupling"],
            forcing=exp["forcing"],
        )

    def schedule(self):
        sch = self.values["schedule"]
        if sch["kind"] == "vp":
            return VPSchedule(gamma0=sch["gamma0"], gamma1=sch["gamma1"],
                              eps=sch["eps"])
        if sch["kind"] == "ve":
            return VESchedule(phi0=sch["phi0"], phi1=sch["phi1"], eps=sch["eps"])
        raise ConfigError(f"unknown schedule kind {sch['kind']!r}")

    def arch_spec(self, kind: str) -> ArchSpec:
        net = self.values["net"]
        return ArchSpec(
            kind=kind,
            dim=self.values["experiment"]["dimension"],
            width_scale=net["width_scale"],
            n_fourier=net["n_fourier"],
            time_embed_dim=net["time_embed_dim"],
            conv_kernel=net["conv_kernel"],
            fc_depth=net["fc_depth"],
            fc_width=net["fc_width"],
            clamp_bound=net["clamp_bound"],
            prune_fraction=net["prune_fraction"],
            prune_every=net["prune_every"],
        )

    def header_comment(self) -> str:
        return f"config={self.config_hash} seed={self.seed}"


def _resolve(raw: dict[str, dict[str, str]]) -> dict[str, dict[str, object]]:
    for section in raw:
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in raw[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
    preset_name = raw.get("experiment", {}).get("preset", "desk").strip()
    if preset_name not in _PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}")
    overlay = _PRESETS[preset_name]

    values: dict[str, dict[str, object]] = {}
    for section, keys in _SCHEMA.items():
        values[section] = {}
        for key, (conv, default) in keys.items():
            if (section, key) in overlay:
                default = overlay[(section, key)]
            if section in raw and key in raw[section]:
                try:
                    values[section][key] = conv(raw[section][key])
                except (ValueError, ConfigError) as exc:
                    raise ConfigError(
                        f"bad value for {key!r} in [{section}]: {exc}"
                    ) from exc
            else:
                values[section][key] = default
    return values


def _validate(values: dict[str, dict[str, object]]) -> None:
    exp = values["experiment"]
    for entry in exp["roster"]:
        if entry not in _ROSTER_KINDS:
            raise ConfigError(f"unknown roster entry {entry!r}")
    if exp["validation"] not in ("oracle", "oracle_tau", "feasible"):
        raise ConfigError(f"unknown validation mode {exp['validation']!r}")
    for delta in exp["delta"]:
        for horizon_key in ("train_horizon", "oos_horizon"):
            steps = exp[horizon_key] / delta
            if abs(steps - round(steps)) > 1e-9:
                raise ConfigError(
                    f"{horizon_key}={exp[horizon_key]} is not an integer "
                    f"multiple of delta={delta}"
                )
    # the drift and schedule constructors run their own validation
    ExperimentSpec(values=values, config_hash="").drift_spec()
    ExperimentSpec(values=values, config_hash="").schedule()


def _canonical(values: dict[str, dict[str, object]]) -> str:
    lines = []
    for section in sorted(values):
        lines.append(f"[{section}]")
        for key in sorted(values[section]):
            lines.append(f"{key}={values[section][key]!r}")
    return "\n".join(lines)


def load_config(path) -> ExperimentSpec:
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    return make_spec(raw)


def make_spec(raw: dict[str, dict[str, str]]) -> ExperimentSpec:
    values = _resolve(raw)
    _validate(values)
    digest = hashlib.sha256(_canonical(values).encode()).hexdigest()[:12]
    return ExperimentSpec(values=values, config_hash=digest)


def net_roster_entries(roster) -> list[str]:
    return [r for r in roster if r in _NET_KINDS]
