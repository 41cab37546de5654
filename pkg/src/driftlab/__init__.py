"""driftlab: drift estimation for multivariate SDEs.

A library and CLI for estimating time-homogeneous drift functions from
many i.i.d. discretely observed trajectories, via a conditional
denoising diffusion estimator alongside classical nonparametric
baselines (Nadaraya-Watson, ridge B-spline, Hermite projection).
"""

from .baselines import (
    HermiteEstimator,
    NWEstimator,
    RidgeEstimator,
    hermite_fit,
    hermite_select_m,
    nw_select_bandwidth,
    ridge_fit,
)
from .estimators import (
    DenoisingEstimator,
    OracleEstimator,
    RegressionEstimator,
    analytic_em_denoiser,
    coeffs,
    reverse_sample,
    tau_sweep,
)
from .evaluation import drift_error, run_experiment
from .nets import ArchSpec, build, expected_param_count, param_count
from .schedules import VESchedule, VPSchedule, forward_sample, ve_sigma, vp_coeffs
from .sde import (
    DriftSpec,
    IncrementPairs,
    TrajectoryDataset,
    drift_eval,
    load_dataset,
    make_increments,
    save_dataset,
    simulate,
)
from .training import TrainConfig, TrainReport, denoising_loss, diagnostics, train

__version__ = "0.1.0"

__all__ = [
    "ArchSpec",
    "DenoisingEstimator",
    "DriftSpec",
    "HermiteEstimator",
    "IncrementPairs",
    "NWEstimator",
    "OracleEstimator",
    "RegressionEstimator",
    "RidgeEstimator",
    "TrainConfig",
    "TrainReport",
    "TrajectoryDataset",
    "VESchedule",
    "VPSchedule",
    "analytic_em_denoiser",
    "build",
    "coeffs",
    "denoising_loss",
    "diagnostics",
    "drift_error",
    "drift_eval",
    "expected_param_count",
    "forward_sample",
    "hermite_fit",
    "hermite_select_m",
    "load_dataset",
    "make_increments",
    "nw_select_bandwidth",
    "param_count",
    "reverse_sample",
    "ridge_fit",
    "run_experiment",
    "save_dataset",
    "simulate",
    "tau_sweep",
    "train",
    "ve_sigma",
    "vp_coeffs",
]
