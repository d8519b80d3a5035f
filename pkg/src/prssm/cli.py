"""Command-line entry point: train, evaluate, simulate, benchmark, synth.

Conventions shared by every subcommand: all file outputs land under --out
and nowhere else, logs go to stderr, and runs are deterministic given the
seed, config, and data.  Exit codes: 0 success, 1 usage error (bad flags,
bad config, missing input files), 2 runtime failure (divergence, dimension
mismatches and friends).  Trace CSVs report y_std per output dim; the
plotting convention for uncertainty bands is mean +/- 2 std.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (DATASET_REGISTRY, NormStats, Trajectory,
                   compute_norm_stats, default_linear_spec,
                   generate_linear_ssm, kalman_free_simulation_rmse,
                   load_csv, normalize, write_csv)
from .errors import DimensionMismatch, MissingColumn, ParseError, PrssmError
from .evaluation import (EVAL_STREAM, TraceData, nll, prssm_free_run, rmse,
                         run_benchmark, trace_filename, write_report_csv,
                         write_trace_csv)
from .model import load_checkpoint, save_checkpoint
from .narx import load_narx_checkpoint, narx_free_simulation
from .recognition import DiagonalGaussian
from .rng import SeededRng
from .training import TrainConfig, fit, write_training_log

LOG = logging.getLogger("prssm")

SIM_SAMPLES = 50  # sample paths per free simulation outside training
SYNTH_ORACLE_WINDOW = 16  # filter steps before the oracle runs open loop
BENCHMARK_KEYS = {"datasets", "methods", "seeds", "data_dir", "jobs",
                  "train", "narx"}
NARX_KEYS = {"n_inducing", "iterations", "learning_rate"}


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="prssm",
                     description="Learn and evaluate probabilistic recurrent "
                                 "state-space models on input/output data.")
    parser.add_argument("--version", action="version",
                        version=f"prssm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    train = sub.add_parser("train", help="fit a model and save a checkpoint")
    train.add_argument("--data", required=True, help="training CSV")
    train.add_argument("--config", help="TrainConfig JSON")
    train.add_argument("--seed", type=int, help="overrides the config seed")
    train.add_argument("--out", required=True, help="output directory")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate",
                        help="free-run a checkpoint and report metrics")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True, help="evaluation CSV")
    ev.add_argument("--seed", type=int, help="prediction sampling seed")
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_evaluate)

    sim = sub.add_parser("simulate",
                         help="free-run a checkpoint and write traces")
    sim.add_argument("--checkpoint", required=True)
    sim.add_argument("--data", required=True, help="CSV providing u (and y)")
    sim.add_argument("--seed", type=int, help="prediction sampling seed")
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    bench = sub.add_parser("benchmark",
                           help="run the method x dataset x seed grid")
    bench.add_argument("--config", required=True, help="benchmark JSON")
    bench.add_argument("--data", help="overrides the config data_dir")
    bench.add_argument("--seed", type=int,
                       help="run this single seed instead of the config list")
    bench.add_argument("--jobs", type=int,
                       help="parallel cells (default: hardware threads)")
    bench.add_argument("--out", required=True)
    bench.set_defaults(func=cmd_benchmark)

    synth = sub.add_parser("synth",
                           help="emit a synthetic dataset and its oracle")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)
    return parser


def _require_file(path_str: str, what: str) -> Path:
    path = Path(path_str)
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n",
                    encoding="utf-8")


def cmd_train(args) -> int:
    data_path = _require_file(args.data, "data file")
    config = TrainConfig()
    if args.config:
        config = TrainConfig.from_json(
            _require_file(args.config, "config file").read_text())
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out = _out_dir(args)

    traj = load_csv(data_path)
    stats = compute_norm_stats(traj)
    train_n = normalize(traj, stats)
    LOG.info("training on %s: %d steps, %d inputs, %d outputs, mode=%s",
             data_path, len(traj), traj.input_dim, traj.obs_dim, config.mode)
    every = max(1, config.iterations // 10)

    def progress(it, report):
        if it % every == 0 or it == config.iterations - 1:
            LOG.info("iter %d  elbo %.4f", it, report.elbo)

    params, rows = fit(train_n, config, callback=progress)
    save_checkpoint(params, out / "checkpoint.json", seed=config.seed,
                    normalization=stats.to_dict())
    write_training_log(rows, out / "training_log.csv")
    (out / "config.json").write_text(config.to_json(), encoding="utf-8")
    LOG.info("wrote %s", out / "checkpoint.json")
    return 0


def _load_any_checkpoint(path: Path):
    """Dispatch on the checkpoint's format tag; returns (kind, model, meta)."""
    doc = json.loads(path.read_text(encoding="utf-8"))
    fmt = doc.get("format")
    if fmt == "prssm-checkpoint":
        params, meta = load_checkpoint(path)
        return "prssm", params, meta
    if fmt == "narx-checkpoint":
        model, meta = load_narx_checkpoint(path)
        return "narx", model, meta
    raise ParseError(f"{path} is not a recognized checkpoint "
                     f"(format tag {fmt!r})")


def _stats_from_meta(meta: dict, traj: Trajectory) -> NormStats:
    if meta.get("normalization") is not None:
        return NormStats.from_dict(meta["normalization"])
    # checkpoint trained on raw data: identity transform
    return NormStats(u_mean=np.zeros(traj.input_dim),
                     u_std=np.ones(traj.input_dim),
                     y_mean=np.zeros(traj.obs_dim),
                     y_std=np.ones(traj.obs_dim))


def _checkpoint_free_run(args) -> tuple[dict, TraceData]:
    """Shared evaluate/simulate path: load, free-run, collect metrics+trace."""
    kind, model, meta = _load_any_checkpoint(
        _require_file(args.checkpoint, "checkpoint"))
    traj = load_csv(_require_file(args.data, "data file"))
    stats = _stats_from_meta(meta, traj)
    data_n = normalize(traj, stats)

    if kind == "prssm":
        if traj.input_dim != model.input_dim or traj.obs_dim != model.obs_dim:
            raise DimensionMismatch(
                f"checkpoint expects {model.input_dim} inputs and "
                f"{model.obs_dim} outputs, data has {traj.input_dim}/"
                f"{traj.obs_dim}")
        seed = args.seed if args.seed is not None else (meta.get("seed") or 0)
        rng = SeededRng(int(seed)).substream(EVAL_STREAM)
        mean_n, var_n = prssm_free_run(model, data_n, SIM_SAMPLES, rng)
        truth_n, start = data_n.y, 0
    else:
        if traj.input_dim != model.input_dim or traj.obs_dim != model.obs_dim:
            raise DimensionMismatch(
                f"checkpoint expects {model.input_dim} inputs and "
                f"{model.obs_dim} outputs, data has {traj.input_dim}/"
                f"{traj.obs_dim}")
        start = model.config.warmup
        mean_n, var_n = narx_free_simulation(model, data_n.u,
                                             data_n.y[:start])
        truth_n = data_n.y[start:]

    metrics = {
        "rmse": rmse(mean_n, truth_n),
        "nll": nll(mean_n, var_n, truth_n),
        "n_steps": int(mean_n.shape[0]),
        "model_type": kind,
    }
    y_mean = mean_n * stats.y_std + stats.y_mean
    y_std = np.sqrt(var_n) * stats.y_std
    metrics["rmse_denormalized"] = rmse(y_mean, traj.y[start:])
    trace = TraceData(t=np.arange(start, len(traj)), y_true=traj.y[start:],
                      y_mean=y_mean, y_std=y_std)
    return metrics, trace


def cmd_evaluate(args) -> int:
    metrics, trace = _checkpoint_free_run(args)
    out = _out_dir(args)
    _write_json(metrics, out / "metrics.json")
    write_trace_csv(trace, out / "trace.csv")
    LOG.info("rmse %.6f  nll %.6f over %d steps", metrics["rmse"],
             metrics["nll"], metrics["n_steps"])
    return 0


def cmd_simulate(args) -> int:
    metrics, trace = _checkpoint_free_run(args)
    out = _out_dir(args)
    write_trace_csv(trace, out / "trace.csv")
    LOG.info("wrote %s (%d steps)", out / "trace.csv", metrics["n_steps"])
    return 0


def _parse_benchmark_config(text: str) -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid benchmark config JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ParseError("benchmark config must be a JSON object")
    unknown = sorted(set(raw) - BENCHMARK_KEYS)
    if unknown:
        raise ParseError(f"unknown benchmark config keys: "
                         f"{', '.join(unknown)}")
    datasets = raw.get("datasets", sorted(DATASET_REGISTRY))
    for name in datasets:
        if name not in DATASET_REGISTRY:
            raise ParseError(f"unknown dataset {name!r}; known: "
                             f"{sorted(DATASET_REGISTRY)}")
    methods = raw.get("methods", ["pr-ssm", "gp-narx"])
    for m in methods:
        if m not in ("pr-ssm", "gp-narx"):
            raise ParseError(f"unknown method {m!r}; known: pr-ssm, gp-narx")
    seeds = [int(s) for s in raw.get("seeds", [0, 1, 2, 3, 4])]
    narx = dict(raw.get("narx", {}))
    unknown = sorted(set(narx) - NARX_KEYS)
    if unknown:
        raise ParseError(f"unknown narx config keys: {', '.join(unknown)}")
    train_doc = raw.get("train", {})
    if not isinstance(train_doc, dict):
        raise ParseError("benchmark 'train' entry must be an object")
    return {
        "datasets": list(datasets),
        "methods": list(methods),
        "seeds": seeds,
        "data_dir": raw.get("data_dir", "datasets"),
        "jobs": raw.get("jobs"),
        "train": TrainConfig.from_json(json.dumps(train_doc)),
        "narx": narx,
    }


def cmd_benchmark(args) -> int:
    cfg = _parse_benchmark_config(
        _require_file(args.config, "config file").read_text())
    if args.data is not None:
        cfg["data_dir"] = args.data
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
    jobs = args.jobs if args.jobs is not None else cfg["jobs"]
    if jobs is None:
        jobs = os.cpu_count() or 1
    out = _out_dir(args)

    LOG.info("benchmark: %d datasets x %d methods x %d seeds, %d jobs",
             len(cfg["datasets"]), len(cfg["methods"]), len(cfg["seeds"]),
             jobs)
    report = run_benchmark(cfg["datasets"], cfg["methods"], cfg["seeds"],
                           cfg["train"], data_dir=cfg["data_dir"], jobs=jobs,
                           **{f"narx_{k}": v for k, v in cfg["narx"].items()})
    write_report_csv(report, out / "report.csv")
    for (method, dataset, seed), trace in report.traces.items():
        write_trace_csv(trace, out / trace_filename(method, dataset, seed))
    summary = {}
    for method in cfg["methods"]:
        summary[method] = {}
        for dataset in cfg["datasets"]:
            mean, std = report.aggregate(method, dataset)
            ok = sum(1 for c in report.cells
                     if c.method == method and c.dataset == dataset
                     and not c.failed)
            summary[method][dataset] = {"rmse_mean": mean, "rmse_std": std,
                                        "cells_ok": ok}
    _write_json(summary, out / "summary.json")
    for c in report.cells:
        if c.failed:
            LOG.warning("cell %s/%s/seed%d failed: %s", c.method, c.dataset,
                        c.seed, c.error)
        else:
            LOG.info("cell %s/%s/seed%d rmse %.4f (%.1fs)", c.method,
                     c.dataset, c.seed, c.rmse, c.wall_seconds)
    if report.ok_count() == 0:
        LOG.error("all %d benchmark cells failed", len(report.cells))
        return 2
    return 0


def cmd_synth(args) -> int:
    out = _out_dir(args)
    spec = default_linear_spec()
    train, test = generate_linear_ssm(spec, args.seed)
    write_csv(train, out / "train.csv")
    write_csv(test, out / "test.csv")
    oracle = kalman_free_simulation_rmse(spec, test, SYNTH_ORACLE_WINDOW)
    info = {
        "seed": args.seed,
        "horizon_train": spec.horizon_train,
        "horizon_test": spec.horizon_test,
        "process_std": spec.process_std,
        "obs_std": spec.obs_std,
        "input_smoothing": spec.input_smoothing,
        "oracle_rmse": oracle,
        "oracle_init_window": SYNTH_ORACLE_WINDOW,
    }
    _write_json(info, out / "info.json")
    LOG.info("synthetic data written to %s; oracle rmse %.6f", out, oracle)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, MissingColumn, FileNotFoundError) as exc:
        LOG.error("%s", exc)
        return 1
    except PrssmError as exc:
        LOG.error("%s: %s", type(exc).__name__, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
