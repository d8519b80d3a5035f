"""Free-simulation evaluation, metrics, and benchmark-report emission.

A benchmark run is a grid of independent cells (method, dataset, seed).
Each cell trains from scratch on the normalized training split, free-runs on
the test split, and reports RMSE and mean negative log-likelihood on the
normalized scale.  Traces carry the denormalized mean and std per step for
plotting.  Cell failures are recorded and never abort the run.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model as md
from .data import (NormStats, Trajectory, compute_norm_stats, load_benchmark,
                   normalize, DATASET_REGISTRY)
from .errors import DimensionMismatch, NonPositiveVariance
from .narx import NarxConfig, fit_narx, narx_free_simulation
from .recognition import DiagonalGaussian, recognize
from .rng import SeededRng
from .training import TrainConfig, fit

__all__ = [
    "rmse",
    "nll",
    "TraceData",
    "CellResult",
    "EvalReport",
    "prssm_free_run",
    "run_benchmark",
    "write_report_csv",
    "write_trace_csv",
    "trace_filename",
]

EVAL_STREAM = 1_000_000_007  # rng substream reserved for prediction sampling


def rmse(pred, truth) -> float:
    """Root mean squared error over all steps and output dimensions."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionMismatch(
            f"prediction shape {pred.shape} != truth shape {truth.shape}")
    return float(np.sqrt(np.mean(np.square(pred - truth))))


def nll(mean, variance, truth) -> float:
    """Mean per-step Gaussian negative log density of the truth."""
    mean = np.asarray(mean, dtype=np.float64)
    variance = np.asarray(variance, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if not (mean.shape == variance.shape == truth.shape):
        raise DimensionMismatch(
            f"shapes differ: mean {mean.shape}, variance {variance.shape}, "
            f"truth {truth.shape}")
    if np.any(variance <= 0.0):
        raise NonPositiveVariance("predictive variance must be positive")
    dens = np.log(2.0 * np.pi * variance) + np.square(truth - mean) / variance
    return float(0.5 * dens.sum(axis=-1).mean())


@dataclass(frozen=True)
class TraceData:
    """Per-step free-simulation trace on the original output scale."""

    t: np.ndarray  # (n,) test-split step indices
    y_true: np.ndarray  # (n, D_y)
    y_mean: np.ndarray  # (n, D_y)
    y_std: np.ndarray  # (n, D_y)


@dataclass(frozen=True)
class CellResult:
    method: str
    dataset: str
    seed: int
    rmse: float  # normalized scale; nan when failed
    nll: float
    rmse_denormalized: float
    wall_seconds: float
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


@dataclass
class EvalReport:
    """All cell results plus traces, aggregable per (method, dataset)."""

    cells: list[CellResult] = field(default_factory=list)
    traces: dict = field(default_factory=dict)  # (method, dataset, seed) -> TraceData

    def aggregate(self, method: str, dataset: str) -> tuple[float, float]:
        """Mean and sample std of RMSE over this cell group's good seeds."""
        values = [c.rmse for c in self.cells
                  if c.method == method and c.dataset == dataset
                  and not c.failed]
        if not values:
            return float("nan"), float("nan")
        mean = float(np.mean(values))
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        return mean, std

    def ok_count(self) -> int:
        return sum(not c.failed for c in self.cells)


def prssm_free_run(params: md.PrssmParams, test: Trajectory, n_samples: int,
                   rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    """Free simulation over a test split with the model's own warm start.

    With a recognition model the initial state is inferred from the first L
    test steps; otherwise the standard-normal prior is used.  Returns the
    per-step output mean and variance on the scale of ``test``.
    """
    if params.recognition is not None:
        window = params.recognition.window
        q1 = recognize(params.recognition, test.y[:window], test.u[:window])
    else:
        d_x = params.state_dim
        q1 = DiagonalGaussian(mean=np.zeros(d_x), variance=np.ones(d_x))
    return md.predict_free_simulation(params, test.u, q1, n_samples, rng)


def _prssm_cell(train_raw: Trajectory, test_raw: Trajectory,
                config: TrainConfig) -> tuple[dict, TraceData]:
    stats = compute_norm_stats(train_raw)
    train_n = normalize(train_raw, stats)
    test_n = normalize(test_raw, stats)
    params, _ = fit(train_n, config)
    rng = SeededRng(config.seed).substream(EVAL_STREAM)
    mean_n, var_n = prssm_free_run(params, test_n, config.n_samples, rng)
    metrics = {
        "rmse": rmse(mean_n, test_n.y),
        "nll": nll(mean_n, var_n, test_n.y),
    }
    y_mean = mean_n * stats.y_std + stats.y_mean
    y_std = np.sqrt(var_n) * stats.y_std
    metrics["rmse_denormalized"] = rmse(y_mean, test_raw.y)
    trace = TraceData(t=np.arange(len(test_raw)), y_true=test_raw.y,
                      y_mean=y_mean, y_std=y_std)
    return metrics, trace


def _narx_cell(train_raw: Trajectory, test_raw: Trajectory, history: int,
               seed: int, n_inducing: int, iterations: int,
               learning_rate: float) -> tuple[dict, TraceData]:
    stats = compute_norm_stats(train_raw)
    train_n = normalize(train_raw, stats)
    test_n = normalize(test_raw, stats)
    config = NarxConfig(l_y=history, l_u=history, n_inducing=n_inducing)
    narx = fit_narx(train_n, config, seed=seed, iterations=iterations,
                    learning_rate=learning_rate)
    h = config.warmup
    mean_n, var_n = narx_free_simulation(narx, test_n.u, test_n.y[:h])
    truth_n = test_n.y[h:]
    metrics = {
        "rmse": rmse(mean_n, truth_n),
        "nll": nll(mean_n, var_n, truth_n),
    }
    y_mean = mean_n * stats.y_std + stats.y_mean
    y_std = np.sqrt(var_n) * stats.y_std
    metrics["rmse_denormalized"] = rmse(y_mean, test_raw.y[h:])
    trace = TraceData(t=np.arange(h, len(test_raw)), y_true=test_raw.y[h:],
                      y_mean=y_mean, y_std=y_std)
    return metrics, trace


def _run_cell(args: tuple) -> tuple[str, str, int, dict, TraceData | None,
                                    float, str]:
    """One benchmark cell, exception-isolated; safe to run in a worker."""
    (method, dataset, seed, config, data_dir,
     narx_n_inducing, narx_iterations, narx_learning_rate) = args
    start = time.perf_counter()
    try:
        train_raw, test_raw, info = load_benchmark(dataset, data_dir)
        if method == "pr-ssm":
            metrics, trace = _prssm_cell(train_raw, test_raw,
                                         replace(config, seed=seed))
        elif method == "gp-narx":
            metrics, trace = _narx_cell(train_raw, test_raw, info.history,
                                        seed, narx_n_inducing,
                                        narx_iterations, narx_learning_rate)
        else:
            raise ValueError(f"unknown method {method!r}")
        error = ""
    except Exception as exc:  # per-cell isolation: record, keep going
        metrics = {"rmse": float("nan"), "nll": float("nan"),
                   "rmse_denormalized": float("nan")}
        trace = None
        error = f"{type(exc).__name__}: {exc}"
    wall = time.perf_counter() - start
    return method, dataset, seed, metrics, trace, wall, error


def run_benchmark(datasets, methods, seeds, config: TrainConfig,
                  data_dir="datasets", jobs: int = 1,
                  narx_n_inducing: int = 100, narx_iterations: int = 2000,
                  narx_learning_rate: float = 0.01) -> EvalReport:
    """Train and evaluate every (method, dataset, seed) cell.

    Cells are independent; ``jobs`` > 1 runs them in worker processes.  The
    report is assembled in the deterministic grid order regardless of
    completion order.
    """
    grid = [(m, d, int(s), config, str(data_dir), narx_n_inducing,
             narx_iterations, narx_learning_rate)
            for m in methods for d in datasets for s in seeds]
    if jobs > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, grid))
    else:
        results = [_run_cell(args) for args in grid]

    report = EvalReport()
    for method, dataset, seed, metrics, trace, wall, error in results:
        report.cells.append(CellResult(
            method=method, dataset=dataset, seed=seed,
            rmse=metrics["rmse"], nll=metrics["nll"],
            rmse_denormalized=metrics["rmse_denormalized"],
            wall_seconds=wall, error=error))
        if trace is not None:
            report.traces[(method, dataset, seed)] = trace
    return report


def write_report_csv(report: EvalReport, path) -> None:
    """One row per cell: method, dataset, seed, rmse, nll, wall_seconds."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "dataset", "seed", "rmse", "nll",
                         "wall_seconds"])
        for c in report.cells:
            if c.failed:
                writer.writerow([c.method, c.dataset, c.seed,
                                 "failed", "failed", repr(c.wall_seconds)])
            else:
                writer.writerow([c.method, c.dataset, c.seed, repr(c.rmse),
                                 repr(c.nll), repr(c.wall_seconds)])


def trace_filename(method: str, dataset: str, seed: int) -> str:
    return f"trace_{method}_{dataset}_seed{seed}.csv"


def write_trace_csv(trace: TraceData, path) -> None:
    """Per-step trace: t, then y_true/y_mean/y_std per output dimension."""
    d_y = trace.y_true.shape[1]
    header = ["t"]
    for j in range(1, d_y + 1):
        header += [f"y_true_{j}", f"y_mean_{j}", f"y_std_{j}"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(trace.t.shape[0]):
            row = [int(trace.t[i])]
            for j in range(d_y):
                row += [repr(float(trace.y_true[i, j])),
                        repr(float(trace.y_mean[i, j])),
                        repr(float(trace.y_std[i, j]))]
            writer.writerow(row)
