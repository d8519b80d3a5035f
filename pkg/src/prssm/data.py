"""Dataset ingestion, normalization, synthetic linear systems, Kalman oracle.

Trajectories are aligned input/output sequences.  Normalization statistics
are always computed on training data only and applied unchanged to test data.
The synthetic linear state-space generator plus its Kalman-filter oracle give
an exact reference for how well any learned model can possibly free-simulate:
the oracle knows the true system, filters a short initial window to localize
the state, and then propagates the mean dynamics open loop.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .errors import (DimensionMismatch, MissingColumn, ParseError,
                     TrajectoryTooShort, UnstableSpec, ZeroVariance)
from .rng import SeededRng

__all__ = [
    "Trajectory",
    "NormStats",
    "LinearSsmSpec",
    "load_csv",
    "write_csv",
    "compute_norm_stats",
    "normalize",
    "denormalize",
    "default_linear_spec",
    "generate_linear_ssm",
    "kalman_free_simulation_rmse",
    "DATASET_REGISTRY",
    "load_benchmark",
]


@dataclass(frozen=True)
class Trajectory:
    """Aligned control inputs u (T, D_u) and observed outputs y (T, D_y)."""

    u: np.ndarray
    y: np.ndarray
    name: str = ""

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        if u.ndim != 2 or y.ndim != 2 or u.shape[0] != y.shape[0] or y.shape[0] < 1:
            raise DimensionMismatch(
                f"inconsistent trajectory shapes u:{u.shape} y:{y.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise ParseError("trajectory contains non-finite values")

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def input_dim(self) -> int:
        return self.u.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.y.shape[1]

    def window(self, start: int, length: int) -> "Trajectory":
        if start < 0 or start + length > len(self):
            raise TrajectoryTooShort(
                f"window [{start}, {start + length}) outside trajectory "
                f"of length {len(self)}")
        return Trajectory(self.u[start: start + length],
                          self.y[start: start + length],
                          name=f"{self.name}[{start}:{start + length}]")


@dataclass(frozen=True)
class NormStats:
    """Per-channel location/scale computed from training data only."""

    u_mean: np.ndarray
    u_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("u_mean", "u_std", "y_mean", "y_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(**{k: np.asarray(d[k], dtype=np.float64)
                      for k in ("u_mean", "u_std", "y_mean", "y_std")})


def compute_norm_stats(traj: Trajectory) -> NormStats:
    stats = NormStats(u_mean=traj.u.mean(axis=0), u_std=traj.u.std(axis=0),
                      y_mean=traj.y.mean(axis=0), y_std=traj.y.std(axis=0))
    if np.any(stats.u_std <= 0.0) or np.any(stats.y_std <= 0.0):
        raise ZeroVariance("constant channel: cannot normalize to unit variance")
    return stats


def normalize(traj: Trajectory, stats: NormStats) -> Trajectory:
    return Trajectory((traj.u - stats.u_mean) / stats.u_std,
                      (traj.y - stats.y_mean) / stats.y_std, name=traj.name)


def denormalize(traj: Trajectory, stats: NormStats) -> Trajectory:
    return Trajectory(traj.u * stats.u_std + stats.u_mean,
                      traj.y * stats.y_std + stats.y_mean, name=traj.name)


def _column_layout(header: list[str]) -> tuple[int, int]:
    """Validate a `u_1..u_Du,y_1..y_Dy` header; returns (D_u, D_y)."""
    u_idx, y_idx = [], []
    for name in header:
        stripped = name.strip()
        prefix, _, num = stripped.partition("_")
        if prefix not in ("u", "y") or not num.isdigit():
            raise ParseError(f"unexpected column name {stripped!r}", column=stripped)
        (u_idx if prefix == "u" else y_idx).append(int(num))
    for prefix, idx in (("u", u_idx), ("y", y_idx)):
        if sorted(idx) != list(range(1, len(idx) + 1)):
            raise MissingColumn(
                f"{prefix}-columns must be numbered 1..{len(idx)}, got {sorted(idx)}")
    if not y_idx:
        raise MissingColumn("no y-columns found")
    return len(u_idx), len(y_idx)


def load_csv(path) -> Trajectory:
    """Read a trajectory CSV with header u_1..u_Du, y_1..y_Dy."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file") from None
        d_u, d_y = _column_layout(header)
        order = {name.strip(): i for i, name in enumerate(header)}
        u_cols = [order[f"u_{i}"] for i in range(1, d_u + 1)]
        y_cols = [order[f"y_{i}"] for i in range(1, d_y + 1)]
        u_rows, y_rows = [], []
        for r, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise ParseError(f"row {r}: expected {len(header)} cells, "
                                 f"got {len(row)}", row=r)
            values = []
            for c, cell in enumerate(row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"row {r}, column {header[c].strip()!r}: "
                        f"could not parse {cell!r}",
                        row=r, column=header[c].strip()) from None
            u_rows.append([values[c] for c in u_cols])
            y_rows.append([values[c] for c in y_cols])
    if not y_rows:
        raise ParseError("file has a header but no data rows")
    return Trajectory(np.asarray(u_rows).reshape(len(y_rows), d_u),
                      np.asarray(y_rows), name=path.stem)


def write_csv(traj: Trajectory, path) -> None:
    """Write a trajectory in the same format load_csv reads (exact round trip)."""
    path = Path(path)
    header = [f"u_{i}" for i in range(1, traj.input_dim + 1)] + \
             [f"y_{i}" for i in range(1, traj.obs_dim + 1)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t in range(len(traj)):
            writer.writerow([repr(float(v)) for v in traj.u[t]] +
                            [repr(float(v)) for v in traj.y[t]])


@dataclass(frozen=True)
class LinearSsmSpec:
    """Ground-truth linear system x' = Ax + Bu + w, y = Cx + v."""

    a: np.ndarray  # (D_x, D_x)
    b: np.ndarray  # (D_x, D_u)
    c: np.ndarray  # (D_y, D_x)
    process_std: float
    obs_std: float
    horizon_train: int
    horizon_test: int
    input_smoothing: float = 0.8  # AR(1) coefficient of the exciting input

    def __post_init__(self):
        radius = float(np.abs(np.linalg.eigvals(self.a)).max())
        if radius >= 1.0:
            raise UnstableSpec(f"spectral radius {radius:.4f} >= 1")

    @property
    def state_dim(self) -> int:
        return self.a.shape[0]

    @property
    def input_dim(self) -> int:
        return self.b.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.c.shape[0]


def default_linear_spec(horizon_train: int = 600,
                        horizon_test: int = 300) -> LinearSsmSpec:
    """Slowly rotating, lightly damped 2-state system with one input/output."""
    theta = 0.3
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    return LinearSsmSpec(a=0.95 * rot, b=np.array([[1.0], [0.5]]),
                         c=np.array([[1.0, 0.0]]), process_std=0.02,
                         obs_std=0.05, horizon_train=horizon_train,
                         horizon_test=horizon_test)


def generate_linear_ssm(spec: LinearSsmSpec,
                        seed: int) -> tuple[Trajectory, Trajectory]:
    """Simulate one run of the system and split it into train/test halves."""
    rng = SeededRng(seed)
    total = spec.horizon_train + spec.horizon_test
    d_x, d_u, d_y = spec.state_dim, spec.input_dim, spec.obs_dim
    phi = spec.input_smoothing
    w_in = rng.standard_normal(total * d_u).reshape(total, d_u)
    w_proc = spec.process_std * rng.standard_normal(total * d_x).reshape(total, d_x)
    w_obs = spec.obs_std * rng.standard_normal(total * d_y).reshape(total, d_y)

    u = np.zeros((total, d_u))
    for t in range(total):
        prev = u[t - 1] if t > 0 else np.zeros(d_u)
        u[t] = phi * prev + np.sqrt(1.0 - phi * phi) * w_in[t]

    x = np.zeros(d_x)
    ys = np.zeros((total, d_y))
    for t in range(total):
        ys[t] = spec.c @ x + w_obs[t]
        x = spec.a @ x + spec.b @ u[t] + w_proc[t]

    train = Trajectory(u[: spec.horizon_train], ys[: spec.horizon_train],
                       name="linear-ssm-train")
    test = Trajectory(u[spec.horizon_train:], ys[spec.horizon_train:],
                      name="linear-ssm-test")
    return train, test


def stationary_state_cov(spec: LinearSsmSpec) -> np.ndarray:
    """Steady-state covariance of x driven by process noise and the AR input."""
    # Augment the state with the input filter so the exciting signal's
    # contribution to the state covariance is included exactly.
    d_x, d_u = spec.state_dim, spec.input_dim
    phi = spec.input_smoothing
    a_aug = np.block([[spec.a, spec.b],
                      [np.zeros((d_u, d_x)), phi * np.eye(d_u)]])
    q_aug = np.zeros((d_x + d_u, d_x + d_u))
    q_aug[:d_x, :d_x] = spec.process_std ** 2 * np.eye(d_x)
    q_aug[d_x:, d_x:] = (1.0 - phi * phi) * np.eye(d_u)
    cov = solve_discrete_lyapunov(a_aug, q_aug)
    return cov[:d_x, :d_x]


def output_autocovariance(spec: LinearSsmSpec, lag: int = 0) -> np.ndarray:
    """Closed-form stationary output autocovariance at a given lag."""
    d_x, d_u = spec.state_dim, spec.input_dim
    phi = spec.input_smoothing
    a_aug = np.block([[spec.a, spec.b],
                      [np.zeros((d_u, d_x)), phi * np.eye(d_u)]])
    q_aug = np.zeros((d_x + d_u, d_x + d_u))
    q_aug[:d_x, :d_x] = spec.process_std ** 2 * np.eye(d_x)
    q_aug[d_x:, d_x:] = (1.0 - phi * phi) * np.eye(d_u)
    cov = solve_discrete_lyapunov(a_aug, q_aug)
    c_aug = np.hstack([spec.c, np.zeros((spec.obs_dim, d_u))])
    shifted = np.linalg.matrix_power(a_aug, lag) @ cov
    auto = c_aug @ shifted @ c_aug.T
    if lag == 0:
        auto = auto + spec.obs_std ** 2 * np.eye(spec.obs_dim)
    return auto


def kalman_free_simulation_rmse(spec: LinearSsmSpec, test: Trajectory,
                                init_window: int) -> float:
    """Best-achievable free-simulation RMSE given the true system.

    A Kalman filter over the first ``init_window`` steps localizes the state;
    the mean dynamics are then propagated open loop on the inputs alone, and
    the output RMSE is taken over the remaining steps.
    """
    d_x = spec.state_dim
    q = spec.process_std ** 2 * np.eye(d_x)
    r = spec.obs_std ** 2 * np.eye(spec.obs_dim)
    x_mean = np.zeros(d_x)
    x_cov = stationary_state_cov(spec)
    for t in range(init_window):
        # measurement update with y_t, then time update with u_t
        s = spec.c @ x_cov @ spec.c.T + r
        gain = x_cov @ spec.c.T @ np.linalg.inv(s)
        x_mean = x_mean + gain @ (test.y[t] - spec.c @ x_mean)
        x_cov = (np.eye(d_x) - gain @ spec.c) @ x_cov
        x_mean = spec.a @ x_mean + spec.b @ test.u[t]
        x_cov = spec.a @ x_cov @ spec.a.T + q
    errors = []
    for t in range(init_window, len(test)):
        errors.append(spec.c @ x_mean - test.y[t])
        x_mean = spec.a @ x_mean + spec.b @ test.u[t]
    return float(np.sqrt(np.mean(np.square(errors))))


@dataclass(frozen=True)
class DatasetInfo:
    """Benchmark fixture layout: split sizes and the NARX history length."""

    name: str
    n_train: int
    n_test: int
    history: int


DATASET_REGISTRY = {
    "actuator": DatasetInfo("actuator", 512, 512, 10),
    "ballbeam": DatasetInfo("ballbeam", 500, 500, 10),
    "drives": DatasetInfo("drives", 250, 250, 10),
    "furnace": DatasetInfo("furnace", 148, 148, 3),
    "dryer": DatasetInfo("dryer", 500, 500, 2),
}


def load_benchmark(name: str, data_dir) -> tuple[Trajectory, Trajectory, DatasetInfo]:
    """Load a benchmark CSV fixture and split it per the registry."""
    key = name.lower()
    if key not in DATASET_REGISTRY:
        raise KeyError(f"unknown dataset {name!r}; known: "
                       f"{sorted(DATASET_REGISTRY)}")
    info = DATASET_REGISTRY[key]
    path = Path(data_dir) / f"{key}.csv"
    if not path.exists():
        raise FileNotFoundError(
            f"benchmark fixture {path} not found. Provide the {info.name} "
            f"time series as a CSV with header u_1,y_1 and at least "
            f"{info.n_train + info.n_test} rows (train split: first "
            f"{info.n_train} rows, test: next {info.n_test}).")
    full = load_csv(path)
    if len(full) < info.n_train + info.n_test:
        raise TrajectoryTooShort(
            f"{path} has {len(full)} rows; need {info.n_train + info.n_test}")
    train = full.window(0, info.n_train)
    test = full.window(info.n_train, info.n_test)
    return (Trajectory(train.u, train.y, name=f"{key}-train"),
            Trajectory(test.u, test.y, name=f"{key}-test"), info)
