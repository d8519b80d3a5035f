"""End-to-end command-line runs: exit codes, file outputs, determinism."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from prssm.cli import main
from prssm.data import (Trajectory, compute_norm_stats, default_linear_spec,
                        generate_linear_ssm, normalize, write_csv,
                        DATASET_REGISTRY)
from prssm.narx import NarxConfig, fit_narx, save_narx_checkpoint

TINY_CONFIG = {"mode": "stochastic", "iterations": 3, "n_samples": 3,
               "n_inducing": 6, "latent_dim": 2, "batch_size": 4,
               "subtraj_len": 20, "recognition_window": 8, "seed": 0}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic train/test CSVs plus a tiny config, shared per module."""
    root = tmp_path_factory.mktemp("cli")
    spec = default_linear_spec(60, 40)
    train, test = generate_linear_ssm(spec, seed=2)
    write_csv(train, root / "train.csv")
    write_csv(test, root / "test.csv")
    (root / "config.json").write_text(json.dumps(TINY_CONFIG))
    return root


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace / "run"
    code = main(["train", "--data", str(workspace / "train.csv"),
                 "--config", str(workspace / "config.json"),
                 "--out", str(out)])
    assert code == 0
    return out


# ------------------------------------------------------------- exit codes

def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.startswith("prssm ")


def test_missing_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1


def test_unknown_flag_is_usage_error(workspace):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--data", str(workspace / "train.csv"),
              "--out", str(workspace / "x"), "--bogus"])
    assert exc.value.code == 1


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["retrain"])
    assert exc.value.code == 1


def test_missing_data_path_exits_one_and_names_it(workspace, caplog):
    missing = workspace / "nope.csv"
    code = main(["train", "--data", str(missing),
                 "--out", str(workspace / "x")])
    assert code == 1
    assert str(missing) in caplog.text


def test_bad_config_exits_one(workspace, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"iterations": 3, "warp_factor": 9}))
    code = main(["train", "--data", str(workspace / "train.csv"),
                 "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert code == 1


def test_malformed_config_json_exits_one(workspace, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    code = main(["train", "--data", str(workspace / "train.csv"),
                 "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert code == 1


@pytest.mark.filterwarnings("ignore:overflow encountered")
@pytest.mark.filterwarnings("ignore:invalid value encountered")
@pytest.mark.filterwarnings("ignore:divide by zero encountered")
def test_divergent_training_exits_two(workspace, tmp_path):
    cfg = tmp_path / "diverge.json"
    cfg.write_text(json.dumps({**TINY_CONFIG, "iterations": 15,
                               "learning_rate": 1e12}))
    code = main(["train", "--data", str(workspace / "train.csv"),
                 "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert code == 2


# ------------------------------------------------------------------ train

def test_train_writes_checkpoint_and_log(trained):
    doc = json.loads((trained / "checkpoint.json").read_text())
    assert doc["format"] == "prssm-checkpoint"
    assert doc["model_type"] == "prssm"
    assert doc["normalization"] is not None
    rows = list(csv.reader((trained / "training_log.csv").open()))
    assert rows[0] == ["iter", "elbo", "loglik", "kl_z", "kl_x1"]
    assert len(rows) == 1 + TINY_CONFIG["iterations"]


def test_train_is_byte_deterministic(workspace, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--data", str(workspace / "train.csv"),
                     "--config", str(workspace / "config.json"),
                     "--out", str(out)]) == 0
        outs.append(out)
    assert (outs[0] / "checkpoint.json").read_bytes() == \
           (outs[1] / "checkpoint.json").read_bytes()
    assert (outs[0] / "training_log.csv").read_bytes() == \
           (outs[1] / "training_log.csv").read_bytes()


def test_seed_flag_overrides_config(workspace, tmp_path):
    docs = []
    for seed in ("7", "8"):
        out = tmp_path / f"seed{seed}"
        assert main(["train", "--data", str(workspace / "train.csv"),
                     "--config", str(workspace / "config.json"),
                     "--seed", seed, "--out", str(out)]) == 0
        docs.append(json.loads((out / "checkpoint.json").read_text()))
    assert docs[0]["seed"] == 7 and docs[1]["seed"] == 8
    assert docs[0]["params"]["q_mu"] != docs[1]["params"]["q_mu"]


# ------------------------------------------------------- simulate/evaluate

def test_simulate_trace_has_positive_std(workspace, trained, tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--checkpoint", str(trained / "checkpoint.json"),
                 "--data", str(workspace / "test.csv"), "--out", str(out)])
    assert code == 0
    rows = list(csv.reader((out / "trace.csv").open()))
    assert rows[0] == ["t", "y_true_1", "y_mean_1", "y_std_1"]
    assert len(rows) == 1 + 40
    stds = [float(r[3]) for r in rows[1:]]
    assert all(s > 0.0 for s in stds)


def test_simulate_is_deterministic(workspace, trained, tmp_path):
    outs = []
    for name in ("s1", "s2"):
        out = tmp_path / name
        assert main(["simulate", "--checkpoint",
                     str(trained / "checkpoint.json"),
                     "--data", str(workspace / "test.csv"),
                     "--out", str(out)]) == 0
        outs.append((out / "trace.csv").read_bytes())
    assert outs[0] == outs[1]


def test_simulate_dimension_mismatch_exits_two(trained, tmp_path):
    bad = Trajectory(np.zeros((30, 2)), np.zeros((30, 1)) + 0.5)
    noisy = Trajectory(bad.u + np.arange(60).reshape(30, 2) * 0.1,
                       bad.y + np.arange(30).reshape(30, 1) * 0.1)
    path = tmp_path / "two_inputs.csv"
    write_csv(noisy, path)
    code = main(["simulate", "--checkpoint", str(trained / "checkpoint.json"),
                 "--data", str(path), "--out", str(tmp_path / "out")])
    assert code == 2


def test_evaluate_writes_metrics(workspace, trained, tmp_path):
    out = tmp_path / "eval"
    code = main(["evaluate", "--checkpoint", str(trained / "checkpoint.json"),
                 "--data", str(workspace / "test.csv"), "--out", str(out)])
    assert code == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["model_type"] == "prssm"
    assert metrics["n_steps"] == 40
    assert np.isfinite(metrics["rmse"]) and np.isfinite(metrics["nll"])
    assert (out / "trace.csv").exists()


def test_evaluate_narx_checkpoint(workspace, tmp_path):
    spec = default_linear_spec(60, 40)
    train, _ = generate_linear_ssm(spec, seed=2)
    stats = compute_norm_stats(train)
    model = fit_narx(normalize(train, stats), NarxConfig(l_y=2, l_u=2,
                                                         n_inducing=5),
                     seed=0, iterations=3)
    ckpt = tmp_path / "narx.json"
    save_narx_checkpoint(model, ckpt, seed=0, normalization=stats.to_dict())
    out = tmp_path / "eval"
    code = main(["evaluate", "--checkpoint", str(ckpt),
                 "--data", str(workspace / "test.csv"), "--out", str(out)])
    assert code == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["model_type"] == "narx"
    # warm start consumes the first max(l_y, l_u) steps
    assert metrics["n_steps"] == 40 - 2
    rows = list(csv.reader((out / "trace.csv").open()))
    assert rows[1][0] == "2"


def test_unrecognized_checkpoint_exits_one(workspace, tmp_path):
    ckpt = tmp_path / "junk.json"
    ckpt.write_text(json.dumps({"format": "something-else"}))
    code = main(["evaluate", "--checkpoint", str(ckpt),
                 "--data", str(workspace / "test.csv"),
                 "--out", str(tmp_path / "out")])
    assert code == 1


# ------------------------------------------------------------------ synth

def test_synth_outputs_and_oracle(tmp_path):
    out = tmp_path / "synth"
    assert main(["synth", "--seed", "3", "--out", str(out)]) == 0
    info = json.loads((out / "info.json").read_text())
    assert 0.0 < info["oracle_rmse"] < 1.0
    train_rows = (out / "train.csv").read_text().splitlines()
    test_rows = (out / "test.csv").read_text().splitlines()
    assert len(train_rows) == 1 + info["horizon_train"]
    assert len(test_rows) == 1 + info["horizon_test"]


def test_synth_is_deterministic(tmp_path):
    for name in ("g1", "g2"):
        assert main(["synth", "--seed", "5",
                     "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "g1" / "train.csv").read_bytes() == \
           (tmp_path / "g2" / "train.csv").read_bytes()
    assert (tmp_path / "g1" / "info.json").read_bytes() == \
           (tmp_path / "g2" / "info.json").read_bytes()


# -------------------------------------------------------------- benchmark

BENCH_TRAIN = {"mode": "full", "iterations": 3, "n_samples": 3,
               "n_inducing": 8, "latent_dim": 2}


def _fixture_csv(data_dir: Path, name: str) -> None:
    info = DATASET_REGISTRY[name]
    spec = default_linear_spec(info.n_train, info.n_test)
    train, test = generate_linear_ssm(spec, seed=0)
    full = Trajectory(np.concatenate([train.u, test.u]),
                      np.concatenate([train.y, test.y]))
    data_dir.mkdir(parents=True, exist_ok=True)
    write_csv(full, data_dir / f"{name}.csv")


def _bench_config(tmp_path: Path, **overrides) -> Path:
    doc = {"datasets": ["furnace"], "methods": ["pr-ssm", "gp-narx"],
           "seeds": [0, 1], "data_dir": str(tmp_path / "data"),
           "train": BENCH_TRAIN,
           "narx": {"n_inducing": 5, "iterations": 3}}
    doc.update(overrides)
    path = tmp_path / "bench.json"
    path.write_text(json.dumps(doc))
    return path


def test_benchmark_grid_and_reports(tmp_path):
    _fixture_csv(tmp_path / "data", "furnace")
    cfg = _bench_config(tmp_path)
    out = tmp_path / "out"
    assert main(["benchmark", "--config", str(cfg), "--jobs", "1",
                 "--out", str(out)]) == 0
    rows = list(csv.reader((out / "report.csv").open()))
    assert len(rows) == 1 + 4  # header + 2 methods x 1 dataset x 2 seeds
    for row in rows[1:]:
        assert row[3] != "failed"
        assert (out / f"trace_{row[0]}_{row[1]}_seed{row[2]}.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["pr-ssm"]["furnace"]["cells_ok"] == 2
    assert np.isfinite(summary["gp-narx"]["furnace"]["rmse_mean"])


def test_benchmark_missing_fixture_marks_cells_failed(tmp_path):
    _fixture_csv(tmp_path / "data", "furnace")
    cfg = _bench_config(tmp_path, datasets=["furnace", "dryer"],
                        methods=["gp-narx"], seeds=[0])
    out = tmp_path / "out"
    assert main(["benchmark", "--config", str(cfg), "--jobs", "1",
                 "--out", str(out)]) == 0
    rows = {r[1]: r for r in list(csv.reader((out / "report.csv").open()))[1:]}
    assert rows["dryer"][3] == "failed"
    assert rows["furnace"][3] != "failed"


def test_benchmark_all_cells_failed_exits_two(tmp_path):
    cfg = _bench_config(tmp_path, datasets=["dryer"], methods=["gp-narx"],
                        seeds=[0])
    out = tmp_path / "out"
    code = main(["benchmark", "--config", str(cfg), "--jobs", "1",
                 "--out", str(out)])
    assert code == 2
    rows = list(csv.reader((out / "report.csv").open()))
    assert rows[1][3] == "failed"


def test_benchmark_rejects_unknown_keys(tmp_path):
    cfg = _bench_config(tmp_path, damping=0.5)
    assert main(["benchmark", "--config", str(cfg),
                 "--out", str(tmp_path / "out")]) == 1


def test_benchmark_rejects_unknown_dataset(tmp_path):
    cfg = _bench_config(tmp_path, datasets=["warehouse"])
    assert main(["benchmark", "--config", str(cfg),
                 "--out", str(tmp_path / "out")]) == 1


def test_benchmark_seed_flag_narrows_grid(tmp_path):
    _fixture_csv(tmp_path / "data", "furnace")
    cfg = _bench_config(tmp_path, methods=["gp-narx"])
    out = tmp_path / "out"
    assert main(["benchmark", "--config", str(cfg), "--jobs", "1",
                 "--seed", "9", "--out", str(out)]) == 0
    rows = list(csv.reader((out / "report.csv").open()))
    assert len(rows) == 2 and rows[1][2] == "9"
