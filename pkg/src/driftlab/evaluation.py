"""Evaluation metrics and experiment orchestration.

The headline metric is the time-integrated drift MSE approximated on
fresh trajectories:

    E_{j Delta} = (1 / (j * I_eval)) sum_i sum_{k<=j} || mu_hat(Y_k) - mu(Y_k) ||^2.

``run_experiment`` reproduces the full protocol: simulate training data,
fit every roster entry (networks by denoising/regression training,
classical baselines by grid selection), evaluate in-sample and
out-of-sample, and write delimited tables and series with quantile
envelopes, plus rendered figures alongside.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import (
    NWEstimator,
    hermite_fit,
    hermite_select_m,
    nw_select_bandwidth,
    ridge_fit,
    ridge_select,
)
from .config import ExperimentSpec, net_roster_entries
from .estimators import DenoisingEstimator, OracleEstimator, RegressionEstimator
from .ioutil import fmt
from .nets import build, set_params
from .sde import DriftSpec, TrajectoryDataset, make_increments, simulate
from .training import TrainConfig, TrainReport, train


class EvaluationError(Exception):
    pass


@dataclass
class EvalSeries:
    """Aggregate error series plus the per-trajectory quantile envelope."""

    t: np.ndarray
    mean: np.ndarray
    q10: np.ndarray
    q50: np.ndarray
    q90: np.ndarray

    @property
    def final(self) -> float:
        return float(self.mean[-1])

    def to_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write("j,t,error,q10,median,q90\n")
            for j in range(self.t.size):
                fh.write(
                    f"{j + 1},{fmt(self.t[j])},{fmt(self.mean[j])},"
                    f"{fmt(self.q10[j])},{fmt(self.q50[j])},{fmt(self.q90[j])}\n"
                )


def pointwise_squared_errors(estimator, ds: TrajectoryDataset, true_drift,
                             rng: np.random.Generator,
                             chunk: int = 2048) -> np.ndarray:
    """|| mu_hat - mu ||^2 at states t_1..t_J of each trajectory; (I, J)."""
    states = ds.states[:, 1:, :]
    n_i, n_j, d = states.shape
    flat = states.reshape(n_i * n_j, d)
    out = np.empty(n_i * n_j)
    for lo in range(0, flat.shape[0], chunk):
        block = flat[lo : lo + chunk]
        pred = estimator.estimate(block, rng)
        mu = np.atleast_2d(true_drift(block))
        out[lo : lo + chunk] = ((pred - mu) ** 2).sum(axis=1)
    return out.reshape(n_i, n_j)


def error_series(sq: np.ndarray, delta: float) -> EvalSeries:
    """Cumulative-mean error series with type-7 quantile envelopes."""
    n_i, n_j = sq.shape
    steps = np.arange(1, n_j + 1)
    per_traj = np.cumsum(sq, axis=1) / steps
    mean = per_traj.mean(axis=0)
    q10, q50, q90 = np.quantile(per_traj, [0.1, 0.5, 0.9], axis=0)
    return EvalSeries(t=steps * delta, mean=mean, q10=q10, q50=q50, q90=q90)


def drift_error(estimator, ds: TrajectoryDataset, true_drift,
                rng: np.random.Generator, j: int | None = None) -> float:
    """E_{j Delta}; j defaults to the full horizon."""
    n_j = ds.n_steps
    j = n_j if j is None else int(j)
    if j < 1 or j > n_j:
        raise EvaluationError(f"step index j={j} outside 1..{n_j}")
    sq = pointwise_squared_errors(estimator, ds, true_drift, rng)
    return float(sq[:, :j].sum() / (j * ds.n_paths))


def report_tables(finals: dict[str, dict[str, float]], roster: list[str]):
    """Final-time table rows with best (*) and second-best (_) markers.

    ``finals`` maps phase name -> {estimator -> error}. Ties are broken
    by roster order and recorded. Returns (csv lines, text lines).
    """
    if not finals:
        raise EvaluationError("no results to tabulate")
    csv_lines = ["phase," + ",".join(roster)]
    text_lines = ["best estimator starred (*), second-best underlined (_)"]
    notes = []
    for phase, by_est in finals.items():
        values = [(name, by_est[name]) for name in roster if name in by_est]
        order = sorted(range(len(values)), key=lambda i: (values[i][1], i))
        marks = [""] * len(values)
        if order:
            marks[order[0]] = "*"
        if len(order) > 1:
            marks[order[1]] = "_"
            if values[order[0]][1] == values[order[1]][1]:
                notes.append(
                    f"tie in {phase}: {values[order[0]][0]} and "
                    f"{values[order[1]][0]} at {fmt(values[order[0]][1])} "
                    f"(roster order breaks the tie)"
                )
        row = {name: f"{fmt(val)}{mark}" for (name, val), mark in zip(values, marks)}
        csv_lines.append(phase + "," + ",".join(row.get(n, "") for n in roster))
        cells = [f"{n}={row[n]}" for n in roster if n in row]
        text_lines.append(f"{phase}: " + "  ".join(cells))
    text_lines.extend(notes)
    csv_lines.extend(f"# {n}" for n in notes)
    return csv_lines, text_lines


@dataclass
class FittedEntry:
    name: str
    estimator: object
    train_report: TrainReport | None = None
    selection_trace: list | None = None
    checkpoint: dict | None = None
    seconds: float = 0.0


def _seed_for(base_seed: int, role: str, index: int = 0) -> int:
    role_key = zlib.crc32(role.encode())  # stable across processes
    return int(np.random.SeedSequence((base_seed, role_key, index))
               .generate_state(1)[0])


def fit_roster_entry(name: str, spec: ExperimentSpec, train_ds: TrajectoryDataset,
                     heldout_ds: TrajectoryDataset, drift: DriftSpec,
                     delta: float) -> FittedEntry:
    """Fit one roster entry by its family's protocol."""
    started = time.perf_counter()
    exp = spec["experiment"]
    schedule = spec.schedule()
    heldout_rng = np.random.default_rng(_seed_for(spec.seed, "select"))

    def oracle_score(estimator):
        return drift_error(estimator, heldout_ds, drift, heldout_rng)

    if name == "oracle":
        entry = FittedEntry(name=name, estimator=OracleEstimator(drift))
    elif name in ("nw",):
        cfg = spec["nw"]
        h, trace = nw_select_bandwidth(
            train_ds, cfg["bandwidths"], method=cfg["selection"],
            score=oracle_score if cfg["selection"] == "oracle" else None,
            trunc=cfg["trunc"])
        est = NWEstimator.from_dataset(train_ds, h, trunc=cfg["trunc"])
        entry = FittedEntry(name=name, estimator=est, selection_trace=trace)
    elif name == "ridge":
        cfg = spec["ridge"]
        (k_i, l_i), trace = ridge_select(
            train_ds, cfg["interior"], cfg["budgets"], oracle_score,
            degree=cfg["degree"], clamp_domain=cfg["clamp_domain"])
        est = ridge_fit(train_ds, degree=cfg["degree"], n_interior=k_i,
                        budget_scale=l_i, clamp_domain=cfg["clamp_domain"])
        entry = FittedEntry(name=name, estimator=est, selection_trace=trace)
    elif name == "hermite":
        cfg = spec["hermite"]
        m, trace = hermite_select_m(
            train_ds, cfg["candidates"], method=cfg["selection"],
            kappa=cfg["kappa"],
            score=oracle_score if cfg["selection"] == "oracle" else None)
        entry = FittedEntry(name=name, estimator=hermite_fit(train_ds, m),
                            selection_trace=trace)
    elif name in net_roster_entries([name]):
        tr = spec["train"]
        config = TrainConfig(
            epochs=tr["epochs"], batch_size=tr["batch_size"], lr=tr["lr"],
            patience=tr["patience"], validation=exp["validation"],
            target_scale=tr["target_scale"], val_k=tr["val_k"],
            val_stride=tr["val_stride"],
            seed=_seed_for(spec.seed, "train-" + name))
        net = build(spec.arch_spec(name), seed=_seed_for(spec.seed, "init-" + name))
        ckpt, report = train(config, make_increments(train_ds), heldout_ds, net,
                             true_drift=drift, schedule=schedule)
        set_params(net, ckpt)
        est_cfg = spec["estimate"]
        if net.conditional:
            estimator = DenoisingEstimator(
                net, schedule, delta, k=est_cfg["k"], tau=est_cfg["tau"],
                target_scale=tr["target_scale"],
                reverse_steps=est_cfg["reverse_steps"])
        else:
            estimator = RegressionEstimator(net, delta,
                                            target_scale=tr["target_scale"])
        entry = FittedEntry(name=name, estimator=estimator, train_report=report,
                            checkpoint=ckpt)
    else:
        raise EvaluationError(f"unknown roster entry {name!r}")
    entry.seconds = time.perf_counter() - started
    return entry


@dataclass
class ExperimentResult:
    scenario: str
    entries: dict[str, FittedEntry]
    series: dict[str, dict[str, EvalSeries]]   # phase -> estimator -> series
    finals: dict[str, dict[str, float]]        # phase -> estimator -> final


def run_scenario(spec: ExperimentSpec, n_train: int, delta: float,
                 out_dir: Path, scenario: str, threads: int = 1,
                 figures: bool = True) -> ExperimentResult:
    """One (I, Delta) cell of the experiment grid."""
    exp = spec["experiment"]
    drift = spec.drift_spec()
    sigma = exp["sigma"]
    j_train = int(round(exp["train_horizon"] / delta))
    j_oos = int(round(exp["oos_horizon"] / delta))

    train_ds = simulate(drift, sigma, n_train, j_train, delta,
                        seed=_seed_for(spec.seed, "train-data"), threads=threads)
    heldout_ds = simulate(drift, sigma, exp["heldout_paths"], j_train, delta,
                          seed=_seed_for(spec.seed, "heldout"), threads=threads)
    insample_ds = simulate(drift, sigma, exp["eval_paths"], j_train, delta,
                           seed=_seed_for(spec.seed, "eval-insample"),
                           threads=threads)
    oos_ds = simulate(drift, sigma, exp["eval_paths"], j_oos, delta,
                      seed=_seed_for(spec.seed, "eval-oos"), threads=threads)

    out_dir.mkdir(parents=True, exist_ok=True)
    header = spec.header_comment() + f" scenario={scenario}"

    entries: dict[str, FittedEntry] = {}
    for name in spec.roster:
        try:
            entries[name] = fit_roster_entry(name, spec, train_ds, heldout_ds,
                                             drift, delta)
        except Exception as exc:
            raise EvaluationError(f"stage fit[{name}] failed: {exc}") from exc
        entry = entries[name]
        stem = out_dir / f"{scenario}_{name}"
        if entry.train_report is not None:
            entry.train_report.to_csv(f"{stem}_train.csv", header)
        if entry.selection_trace is not None:
            with open(f"{stem}_selection.csv", "w") as fh:
                fh.write(f"# {header}\n")
                fh.write("hyperparameter,value\n")
                for hp, val in entry.selection_trace:
                    label = ";".join(str(v) for v in hp) if isinstance(hp, tuple) else hp
                    fh.write(f"{label},{fmt(val)}\n")

    series: dict[str, dict[str, EvalSeries]] = {"insample": {}, "oos": {}}
    finals: dict[str, dict[str, float]] = {"insample": {}, "oos": {}}
    for phase, ds in (("insample", insample_ds), ("oos", oos_ds)):
        for name, entry in entries.items():
            rng = np.random.default_rng(_seed_for(spec.seed, f"eval-{phase}-{name}"))
            try:
                sq = pointwise_squared_errors(entry.estimator, ds, drift, rng)
            except Exception as exc:
                raise EvaluationError(
                    f"stage evaluate[{phase}/{name}] failed: {exc}") from exc
            s = error_series(sq, delta)
            series[phase][name] = s
            finals[phase][name] = s.final
            s.to_csv(out_dir / f"{scenario}_{name}_{phase}_series.csv", header)

    csv_lines, text_lines = report_tables(finals, spec.roster)
    (out_dir / f"{scenario}_final_table.csv").write_text(
        f"# {header}\n" + "\n".join(csv_lines) + "\n")
    (out_dir / f"{scenario}_final_table.txt").write_text(
        f"# {header}\n" + "\n".join(text_lines) + "\n")

    if figures:
        from . import figures as figmod

        figmod.render_scenario(out_dir, scenario, spec, drift, train_ds,
                               entries, series)
    return ExperimentResult(scenario=scenario, entries=entries, series=series,
                            finals=finals)


def run_experiment(spec: ExperimentSpec, out_dir, threads: int = 1,
                   figures: bool = True) -> list[ExperimentResult]:
    """The full grid over training sizes and sampling steps, plus
    sensitivity summaries when the grid has more than one cell."""
    out_dir = Path(out_dir)
    exp = spec["experiment"]
    results = []
    for n_train in exp["train_paths"]:
        for delta in exp["delta"]:
            scenario = f"{spec.name}_I{n_train}_d{int(round(1 / delta))}"
            results.append(run_scenario(spec, n_train, delta, out_dir, scenario,
                                        threads=threads, figures=figures))
    _write_sensitivity(spec, results, out_dir)
    return results


def _write_sensitivity(spec: ExperimentSpec, results: list[ExperimentResult],
                       out_dir: Path) -> None:
    exp = spec["experiment"]
    sizes = exp["train_paths"]
    if len(sizes) < 2 or len(results) < 2:
        return
    header = spec.header_comment()
    # relative change of the final in-sample error vs the largest I
    largest = max(sizes)
    by_size = {}
    for res, (n_train, delta) in zip(
            results, [(i, d) for i in sizes for d in exp["delta"]]):
        by_size.setdefault(delta, {})[n_train] = res
    lines = ["delta,estimator,n_small,n_large,error_small,error_large,relative_change"]
    for delta, group in by_size.items():
        if largest not in group:
            continue
        ref = group[largest].finals["insample"]
        for n_train, res in sorted(group.items()):
            if n_train == largest:
                continue
            for name, err in res.finals["insample"].items():
                rel = abs(err - ref[name]) / ref[name] if ref[name] > 0 else np.inf
                lines.append(f"{fmt(delta)},{name},{n_train},{largest},"
                             f"{fmt(err)},{fmt(ref[name])},{fmt(rel)}")
    (out_dir / f"{spec.name}_sensitivity.csv").write_text(
        f"# {header}\n" + "\n".join(lines) + "\n")
