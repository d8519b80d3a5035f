"""Probabilistic recurrent state-space models with sparse GP transitions.

The package learns latent Markovian dynamics from input/output time series:
each latent dimension carries an independent sparse GP transition, inference
runs stochastic gradients through sampled state rollouts, and long-term
accuracy is judged by free simulation against a GP-NARX baseline.

Typical use::

    from prssm import TrainConfig, fit, load_csv

    traj = load_csv("train.csv")
    params, log = fit(traj, TrainConfig(mode="stochastic", iterations=5000))
"""

from __future__ import annotations

__version__ = "0.1.0"

from .data import (DATASET_REGISTRY, DatasetInfo, LinearSsmSpec, NormStats,
                   Trajectory, compute_norm_stats, default_linear_spec,
                   denormalize, generate_linear_ssm,
                   kalman_free_simulation_rmse, load_benchmark, load_csv,
                   normalize, write_csv)
from .errors import (DimensionMismatch, Diverged, IndexOutOfRange,
                     MissingColumn, NonFiniteGradient, NonFiniteState,
                     NonPositiveVariance, NotPositiveDefinite, ParseError,
                     PrssmError, TrajectoryTooShort, UnstableSpec,
                     WindowTooShort, ZeroVariance)
from .evaluation import (CellResult, EvalReport, TraceData, nll,
                         prssm_free_run, rmse, run_benchmark,
                         write_report_csv, write_trace_csv)
from .model import (PrssmParams, elbo, load_checkpoint,
                    predict_free_simulation, save_checkpoint)
from .narx import (NarxConfig, NarxModel, fit_narx, load_narx_checkpoint,
                   narx_free_simulation, narx_one_step, save_narx_checkpoint)
from .recognition import DiagonalGaussian, RecognitionParams, recognize
from .rng import SeededRng
from .training import TrainConfig, TrainLogRow, fit, init_params, \
    write_training_log

__all__ = [
    "__version__",
    # data
    "Trajectory", "NormStats", "compute_norm_stats", "normalize",
    "denormalize", "load_csv", "write_csv", "LinearSsmSpec",
    "default_linear_spec", "generate_linear_ssm",
    "kalman_free_simulation_rmse", "DATASET_REGISTRY", "DatasetInfo",
    "load_benchmark",
    # model and training
    "PrssmParams", "elbo", "predict_free_simulation", "save_checkpoint",
    "load_checkpoint", "TrainConfig", "TrainLogRow", "fit", "init_params",
    "write_training_log", "DiagonalGaussian", "RecognitionParams",
    "recognize", "SeededRng",
    # baseline
    "NarxConfig", "NarxModel", "fit_narx", "narx_one_step",
    "narx_free_simulation", "save_narx_checkpoint", "load_narx_checkpoint",
    # evaluation
    "rmse", "nll", "TraceData", "CellResult", "EvalReport", "prssm_free_run",
    "run_benchmark", "write_report_csv", "write_trace_csv",
    # errors
    "PrssmError", "NotPositiveDefinite", "DimensionMismatch",
    "IndexOutOfRange", "NonFiniteState", "WindowTooShort",
    "TrajectoryTooShort", "ZeroVariance", "UnstableSpec", "ParseError",
    "MissingColumn", "NonPositiveVariance", "Diverged", "NonFiniteGradient",
]
