"""Command-line interface.

Subcommands: simulate, train, estimate, sweep-tau, evaluate, report,
selftest. Exit codes: 0 success, 1 validation error (bad flags, config,
or inputs), 2 runtime failure. Reports render figures next to every
delimited output.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .handles import HandleError, load_handle, save_handle
from .ioutil import fmt
from .sde import DatasetFormatError, export_csv, save_dataset, simulate


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that signals usage problems instead of exiting with 2."""

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="driftlab",
                     description="drift estimation laboratory for SDEs")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="experiment config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for trajectory simulation")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")

    common(sub.add_parser("simulate", help="simulate a training dataset"))
    common(sub.add_parser("train", help="fit the network roster entries"))
    common(sub.add_parser("evaluate", help="run the full experiment"))

    p_est = sub.add_parser("estimate", help="evaluate a fitted estimator at states")
    p_est.add_argument("--est", required=True, help="estimator handle (.est)")
    p_est.add_argument("--points", required=True,
                       help="CSV of query states, one row per state")
    p_est.add_argument("--out", default="estimates.csv")
    p_est.add_argument("--seed", type=int, default=0)

    p_sweep = sub.add_parser("sweep-tau",
                             help="drift MSE across diffusion times")
    common(p_sweep)
    p_sweep.add_argument("--est", default=None,
                         help="reuse a fitted network handle instead of training")

    p_rep = sub.add_parser("report", help="regenerate tables and figures from series CSVs")
    p_rep.add_argument("--in", dest="in_dir", required=True)
    p_rep.add_argument("--out", default=None,
                       help="output directory (default: same as --in)")

    sub.add_parser("selftest", help="run the invariant suite")
    return parser


def _spec_from_args(args):
    spec = load_config(args.config)
    if args.seed is not None:
        spec.values["experiment"]["seed"] = args.seed
    return spec


def _cmd_simulate(args) -> int:
    spec = _spec_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    exp = spec["experiment"]
    drift = spec.drift_spec()
    for n_train in exp["train_paths"]:
        for delta in exp["delta"]:
            j = int(round(exp["train_horizon"] / delta))
            ds = simulate(drift, exp["sigma"], n_train, j, delta,
                          seed=spec.seed, threads=args.threads)
            stem = out / f"{spec.name}_I{n_train}_d{int(round(1 / delta))}"
            save_dataset(f"{stem}.sdds", ds)
            export_csv(f"{stem}.csv", ds, header_comment=spec.header_comment())
            print(f"wrote {stem}.sdds and {stem}.csv "
                  f"({n_train} paths x {j} steps, dim {ds.dim})")
    return 0


def _cmd_train(args) -> int:
    from .config import net_roster_entries
    from .evaluation import _seed_for, fit_roster_entry

    spec = _spec_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    exp = spec["experiment"]
    drift = spec.drift_spec()
    nets = net_roster_entries(spec.roster)
    if not nets:
        print("no network entries in the roster", file=sys.stderr)
        return 1
    delta = exp["delta"][0]
    n_train = exp["train_paths"][0]
    j = int(round(exp["train_horizon"] / delta))
    train_ds = simulate(drift, exp["sigma"], n_train, j, delta,
                        seed=_seed_for(spec.seed, "train-data"),
                        threads=args.threads)
    heldout = simulate(drift, exp["sigma"], exp["heldout_paths"], j, delta,
                       seed=_seed_for(spec.seed, "heldout"), threads=args.threads)
    for name in nets:
        entry = fit_roster_entry(name, spec, train_ds, heldout, drift, delta)
        stem = out / f"{spec.name}_{name}"
        entry.train_report.to_csv(f"{stem}_train.csv", spec.header_comment())
        save_handle(f"{stem}.est", entry.estimator,
                    arch_spec=spec.arch_spec(name))
        if not args.no_figures:
            from .figures import plot_training

            plot_training(entry.train_report, f"{spec.name} {name}",
                          f"{stem}_train.png")
        print(f"trained {name}: {entry.train_report.n_epochs()} epochs, "
              f"selected {entry.train_report.selected_epoch}, "
              f"handle {stem}.est ({entry.seconds:.1f}s)")
    return 0


def _read_points(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                continue  # header line
    if not rows:
        raise UsageError(f"no numeric rows in {path}")
    return np.asarray(rows)


def _cmd_estimate(args) -> int:
    from .estimators import DenoisingEstimator

    estimator = load_handle(args.est)
    pts = _read_points(args.points)
    rng = np.random.default_rng(args.seed)
    dim = pts.shape[1]
    with open(args.out, "w") as fh:
        if isinstance(estimator, DenoisingEstimator):
            mean, lo, hi = estimator.estimate_with_envelope(pts, rng)
            header = ([f"y{d + 1}" for d in range(dim)]
                      + [f"mu{d + 1}" for d in range(dim)]
                      + [f"q10_{d + 1}" for d in range(dim)]
                      + [f"q90_{d + 1}" for d in range(dim)])
            fh.write(",".join(header) + "\n")
            for r in range(pts.shape[0]):
                vals = np.concatenate([pts[r], mean[r], lo[r], hi[r]])
                fh.write(",".join(fmt(v) for v in vals) + "\n")
        else:
            est = estimator.estimate(pts, rng)
            header = ([f"y{d + 1}" for d in range(dim)]
                      + [f"mu{d + 1}" for d in range(dim)])
            fh.write(",".join(header) + "\n")
            for r in range(pts.shape[0]):
                vals = np.concatenate([pts[r], est[r]])
                fh.write(",".join(fmt(v) for v in vals) + "\n")
    print(f"wrote {args.out} ({pts.shape[0]} states)")
    return 0


def _cmd_sweep_tau(args) -> int:
    from .estimators import DenoisingEstimator, tau_sweep
    from .evaluation import _seed_for, fit_roster_entry

    spec = _spec_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    exp = spec["experiment"]
    drift = spec.drift_spec()
    delta = exp["delta"][0]
    j = int(round(exp["train_horizon"] / delta))

    if args.est is not None:
        estimator = load_handle(args.est)
        if not isinstance(estimator, DenoisingEstimator):
            raise UsageError("--est must point to a denoising-network handle")
        train_ds = simulate(drift, exp["sigma"], exp["train_paths"][0], j, delta,
                            seed=_seed_for(spec.seed, "train-data"),
                            threads=args.threads)
    else:
        train_ds = simulate(drift, exp["sigma"], exp["train_paths"][0], j, delta,
                            seed=_seed_for(spec.seed, "train-data"),
                            threads=args.threads)
        heldout = simulate(drift, exp["sigma"], exp["heldout_paths"], j, delta,
                           seed=_seed_for(spec.seed, "heldout"),
                           threads=args.threads)
        entry = fit_roster_entry("dn", spec, train_ds, heldout, drift, delta)
        estimator = entry.estimator
        save_handle(out / f"{spec.name}_dn.est", estimator,
                    arch_spec=spec.arch_spec("dn"))

    sweep_cfg = spec["sweep"]
    schedule = spec.schedule()
    taus = np.logspace(np.log10(schedule.eps), 0.0, sweep_cfg["n_taus"])
    states = train_ds.states.reshape(-1, train_ds.dim)
    center = states.mean(axis=0)
    pts = []
    for coord in range(train_ds.dim):
        lo_q, hi_q = np.quantile(states[:, coord], [0.005, 0.995])
        grid = np.linspace(lo_q, hi_q, sweep_cfg["n_points"])
        block = np.tile(center, (grid.size, 1))
        block[:, coord] = grid
        pts.append(block)
    y_pts = np.concatenate(pts, axis=0)

    rng = np.random.default_rng(_seed_for(spec.seed, "sweep"))
    results = tau_sweep(estimator, taus, y_pts, drift, ks=sweep_cfg["ks"],
                        rng=rng, base_steps=sweep_cfg["base_steps"])
    sweep_path = out / f"{spec.name}_sweep.csv"
    with open(sweep_path, "w") as fh:
        fh.write(f"# {spec.header_comment()}\n")
        fh.write("tau,K,e2\n")
        for k, e2 in sorted(results.items()):
            for tau, val in zip(np.sort(taus), e2):
                fh.write(f"{fmt(tau)},{k},{fmt(val)}\n")
    if not args.no_figures:
        from .figures import plot_tau_sweep

        plot_tau_sweep(np.sort(taus), results, spec.name,
                       out / f"{spec.name}_sweep.png")
    print(f"wrote {sweep_path}")
    return 0


def _cmd_evaluate(args) -> int:
    from .evaluation import run_experiment

    spec = _spec_from_args(args)
    results = run_experiment(spec, args.out, threads=args.threads,
                             figures=not args.no_figures)
    for res in results:
        for phase, by_est in res.finals.items():
            summary = "  ".join(f"{n}={v:.5g}" for n, v in by_est.items())
            print(f"{res.scenario} {phase}: {summary}")
    return 0


def _cmd_report(args) -> int:
    from .reporting import regenerate_report

    out = Path(args.out) if args.out else Path(args.in_dir)
    written = regenerate_report(Path(args.in_dir), out)
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return run_selftest()


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    handlers = {
        "simulate": _cmd_simulate,
        "train": _cmd_train,
        "estimate": _cmd_estimate,
        "sweep-tau": _cmd_sweep_tau,
        "evaluate": _cmd_evaluate,
        "report": _cmd_report,
        "selftest": _cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, HandleError, DatasetFormatError, UsageError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
