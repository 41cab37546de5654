"""Figure rendering for the report path.

Every delimited output of an experiment gets a rendered twin: drift
overlays with the quantile envelope over noise draws, error time series
with trajectory envelopes, tau-sweep curves, selection traces, and
training diagnostics. Files are PNG, written next to the CSVs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .estimators import DenoisingEstimator


def _save(fig, path) -> None:
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def plot_error_series(series_by_est: dict, title: str, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, s in series_by_est.items():
        (line,) = ax.plot(s.t, s.mean, label=name)
        ax.fill_between(s.t, s.q10, s.q90, color=line.get_color(), alpha=0.2)
    ax.set_xlabel("t")
    ax.set_ylabel("time-integrated drift MSE")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_drift_overlay(grid: np.ndarray, true_vals: np.ndarray,
                       est_vals: np.ndarray, lo: np.ndarray | None,
                       hi: np.ndarray | None, title: str, path,
                       coord: int = 0) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(grid, true_vals, color="red", label="true drift")
    ax.plot(grid, est_vals, color="blue", label="estimate")
    if lo is not None and hi is not None:
        ax.fill_between(grid, lo, hi, color="blue", alpha=0.2,
                        label="10-90% over draws")
    ax.set_xlabel(f"y[{coord}]")
    ax.set_ylabel(f"drift[{coord}]")
    ax.set_title(title)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_tau_sweep(taus: np.ndarray, e2_by_k: dict[int, np.ndarray],
                   title: str, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for k, e2 in sorted(e2_by_k.items()):
        ax.plot(taus, e2, marker="o", ms=2.5, label=f"K={k}")
    ax.set_xlabel("diffusion time")
    ax.set_ylabel("drift MSE")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_selection_trace(trace: list, title: str, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    labels = [str(hp) for hp, _ in trace]
    values = [val for _, val in trace]
    numeric = all(isinstance(hp, (int, float)) for hp, _ in trace)
    if numeric:
        ax.plot([hp for hp, _ in trace], values, marker="o", ms=3)
        ax.set_xlabel("hyperparameter")
    else:
        ax.plot(range(len(values)), values, marker="o", ms=3)
        ax.set_xticks(range(len(values)), labels, rotation=45, fontsize=6)
    ax.set_ylabel("selection criterion")
    ax.set_yscale("log" if min(values) > 0 else "linear")
    ax.set_title(title)
    _save(fig, path)


def plot_training(report, title: str, path) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    epochs = np.arange(report.n_epochs())
    ax = axes[0]
    ax.plot(epochs, report.train_loss, color="tab:blue", label="training loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss", color="tab:blue")
    twin = ax.twinx()
    twin.plot(epochs, report.val_metric, color="red", label="validation")
    twin.set_ylabel("validation metric", color="red")
    ax.axvline(report.selected_epoch, color="gray", ls="--", lw=0.8)
    ax.set_title("losses")
    ax = axes[1]
    ax.plot(epochs, report.grad_tau, color="darkgreen", label="d/d tau")
    ax.plot(epochs, report.grad_x, color="tab:blue", label="d/d x")
    ax.plot(epochs, report.grad_y, color="orange", label="d/d y")
    ax.set_xlabel("epoch")
    ax.set_ylabel("batch-averaged input gradient norm")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    ax.set_title("input gradients")
    ax = axes[2]
    ax.plot(epochs, report.m_ratio)
    ax.axvline(report.selected_epoch, color="gray", ls="--", lw=0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("|m| / |output|")
    ax.set_title("time-head contribution")
    fig.suptitle(title)
    _save(fig, path)


def render_scenario(out_dir: Path, scenario: str, spec, drift, train_ds,
                    entries: dict, series: dict) -> None:
    """All figures for one experiment scenario."""
    for phase in ("insample", "oos"):
        plot_error_series(series[phase], f"{scenario} {phase}",
                          out_dir / f"{scenario}_{phase}_series.png")
    for name, entry in entries.items():
        if entry.train_report is not None:
            plot_training(entry.train_report, f"{scenario} {name}",
                          out_dir / f"{scenario}_{name}_train.png")
        if entry.selection_trace is not None:
            plot_selection_trace(entry.selection_trace, f"{scenario} {name}",
                                 out_dir / f"{scenario}_{name}_selection.png")
    _drift_overlays(out_dir, scenario, spec, drift, train_ds, entries)


def _drift_overlays(out_dir: Path, scenario: str, spec, drift, train_ds,
                    entries: dict) -> None:
    """True vs estimated drift along each axis slice.

    Non-plotted coordinates are fixed at the empirical mean of the
    training states; the grid spans the 0.5%-99.5% quantile box.
    """
    states = train_ds.states.reshape(-1, train_ds.dim)
    center = states.mean(axis=0)
    dim = train_ds.dim
    coords = range(dim) if dim <= 4 else [0, dim // 2, dim - 1]
    for name, entry in entries.items():
        if name == "oracle":
            continue
        rng = np.random.default_rng(7)
        for coord in coords:
            lo, hi = np.quantile(states[:, coord], [0.005, 0.995])
            grid = np.linspace(lo, hi, 101)
            pts = np.tile(center, (grid.size, 1))
            pts[:, coord] = grid
            true_vals = np.atleast_2d(drift(pts))[:, coord]
            est = entry.estimator
            env_lo = env_hi = None
            try:
                if isinstance(est, DenoisingEstimator):
                    mean, q10, q90 = est.estimate_with_envelope(pts, rng)
                    vals, env_lo, env_hi = mean[:, coord], q10[:, coord], q90[:, coord]
                else:
                    vals = est.estimate(pts, rng)[:, coord]
            except Exception:
                continue  # domain-restricted estimators may reject the slice
            plot_drift_overlay(
                grid, true_vals, vals, env_lo, env_hi,
                f"{scenario} {name} (axis {coord})",
                out_dir / f"{scenario}_{name}_drift_axis{coord}.png",
                coord=coord)
