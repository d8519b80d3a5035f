"""Sparse GP-NARX baseline: autoregressive regression with mean propagation.

One sparse variational GP per output dimension maps a window of recent
outputs and inputs to the next output.  The regressor at step t is
(y_t .. y_{t-L_y+1}, u_t .. u_{t-L_u+1}), newest first, and predicts y_{t+1}.
Long-term prediction feeds predicted means back into the window; one-step
predictive variances are reported but never propagated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular as _solve_tri

from . import tape as tp
from .data import Trajectory
from .errors import (Diverged, DimensionMismatch, NonFiniteGradient,
                     NotPositiveDefinite, ParseError, TrajectoryTooShort,
                     WindowTooShort)
from .kernels import (ard_from_cache, ard_kernel, ard_kernel_value,
                      kernel_cache)
from .rng import SeededRng
from .sparse_gp import VARIANCE_FLOOR
from .training import adam_step, AdamState, clip_gradient

__all__ = [
    "NarxConfig",
    "NarxModel",
    "build_regressors",
    "fit_narx",
    "narx_one_step",
    "narx_free_simulation",
    "save_narx_checkpoint",
    "load_narx_checkpoint",
]

LOG_2PI = float(np.log(2.0 * np.pi))
NARX_FIELDS = ("z", "q_mu", "q_log_sigma", "log_sf2", "log_l2", "log_noise")
MAX_CONSECUTIVE_FAILURES = 10


@dataclass(frozen=True)
class NarxConfig:
    """History lengths (current step included) and inducing-point count."""

    l_y: int
    l_u: int
    n_inducing: int = 100

    def __post_init__(self):
        if self.l_y < 1 or self.l_u < 1:
            raise ParseError(f"history lengths must be >= 1, "
                             f"got l_y={self.l_y}, l_u={self.l_u}")
        if self.n_inducing < 1:
            raise ParseError(f"n_inducing must be >= 1, got {self.n_inducing}")

    @property
    def warmup(self) -> int:
        return max(self.l_y, self.l_u)

    def regressor_dim(self, obs_dim: int, input_dim: int) -> int:
        return self.l_y * obs_dim + self.l_u * input_dim


@dataclass(frozen=True)
class NarxModel:
    """One zero-mean sparse GP regressor per output dimension.

    Arrays are stacked over output dimensions: ``z`` is (D_y, P, R) with R
    the regressor dimension, ``q_mu``/``q_log_sigma`` are (D_y, P), the
    kernel logs are (D_y,) and (D_y, R), and ``log_noise`` holds the per
    output observation noise variance.
    """

    config: NarxConfig
    obs_dim: int
    input_dim: int
    z: np.ndarray
    q_mu: np.ndarray
    q_log_sigma: np.ndarray
    log_sf2: np.ndarray
    log_l2: np.ndarray
    log_noise: np.ndarray

    def __post_init__(self):
        r = self.config.regressor_dim(self.obs_dim, self.input_dim)
        if self.z.shape != (self.obs_dim, self.config.n_inducing, r):
            raise DimensionMismatch(
                f"inducing inputs must be {(self.obs_dim, self.config.n_inducing, r)}, "
                f"got {self.z.shape}")


def build_regressors(trajectories, config: NarxConfig) -> tuple[np.ndarray, np.ndarray]:
    """Window every trajectory into (X, Y) regression pairs.

    Row t of X holds (y_t .. y_{t-L_y+1}, u_t .. u_{t-L_u+1}) and predicts
    Y row y_{t+1}; windows never cross trajectory boundaries.
    """
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    h = config.warmup
    xs, ys = [], []
    for tr in trajectories:
        t_len = len(tr)
        if t_len <= h:
            raise TrajectoryTooShort(
                f"{t_len} steps cannot support history {h} plus a target")
        n = t_len - h  # regressors at t = h-1 .. t_len-2
        blocks = [tr.y[h - 1 - lag: t_len - 1 - lag]
                  for lag in range(config.l_y)]
        blocks += [tr.u[h - 1 - lag: t_len - 1 - lag]
                   for lag in range(config.l_u)]
        xs.append(np.concatenate(blocks, axis=1))
        ys.append(tr.y[h:])
        assert xs[-1].shape[0] == n
    return np.concatenate(xs, axis=0), np.concatenate(ys, axis=0)


def _narx_arrays(model: NarxModel) -> dict[str, np.ndarray]:
    return {name: getattr(model, name) for name in NARX_FIELDS}


def _flatten(model: NarxModel) -> np.ndarray:
    return np.concatenate([a.ravel() for a in _narx_arrays(model).values()])


def _unflatten(flat: np.ndarray, template: NarxModel) -> NarxModel:
    pos, fields = 0, {}
    for name, a in _narx_arrays(template).items():
        fields[name] = flat[pos: pos + a.size].reshape(a.shape).copy()
        pos += a.size
    return NarxModel(config=template.config, obs_dim=template.obs_dim,
                     input_dim=template.input_dim, **fields)


def _init_model(x: np.ndarray, y: np.ndarray, input_dim: int,
                config: NarxConfig, rng: SeededRng) -> NarxModel:
    """Inducing inputs start on jittered data points with matching outputs.

    Lengthscales scale with the regressor dimension so typical normalized
    points start at moderate correlation instead of mutual irrelevance.
    """
    n, r = x.shape
    d_y = y.shape[1]
    p = config.n_inducing
    z_rows, mu_rows = [], []
    for d in range(d_y):
        idx = rng.integers(p, 0, n)
        jitter = 0.05 * rng.standard_normal(p * r).reshape(p, r)
        z_rows.append(x[idx] + jitter)
        mu_rows.append(y[idx, d])
    return NarxModel(
        config=config, obs_dim=d_y, input_dim=input_dim,
        z=np.stack(z_rows), q_mu=np.stack(mu_rows),
        q_log_sigma=np.full((d_y, p), np.log(0.1 ** 2)),
        log_sf2=np.zeros(d_y),
        log_l2=np.full((d_y, r), np.log(float(r))),
        log_noise=np.full(d_y, np.log(0.5 ** 2)))


def narx_elbo(leaves: dict[str, tp.Tensor], x: np.ndarray,
              y: np.ndarray) -> tp.Tensor:
    """Sparse-GP regression bound, exact in the Gaussian likelihood.

    Per point the expected log-density under q(f) is the usual Gaussian
    log-density at the predictive mean minus v_i/(2σ²); summing over points
    and subtracting each dimension's inducing KL gives the bound.
    """
    n = x.shape[0]
    d_y = y.shape[1]
    p = leaves["q_mu"].shape[1]
    eye = np.eye(p)
    total = None
    for d in range(d_y):
        z_d = leaves["z"][d]
        kzz = ard_kernel(z_d, z_d, leaves["log_sf2"][d], leaves["log_l2"][d])
        l = tp.cholesky(kzz)
        y1 = tp.solve_triangular(l, leaves["q_mu"][d], lower=True)
        w = tp.solve_triangular(l, y1, lower=True, trans=True)
        linv = tp.solve_triangular(l, eye, lower=True)
        kinv = tp.matmul(tp.transpose(linv), linv)
        sigma = tp.exp(leaves["q_log_sigma"][d])
        b = kinv - tp.matmul(tp.multiply(kinv, sigma), kinv)

        kstar = ard_kernel(x, z_d, leaves["log_sf2"][d], leaves["log_l2"][d])
        mean = tp.matmul(kstar, w)
        quad = tp.tensor_sum(tp.multiply(tp.matmul(kstar, b), kstar), axis=-1)
        var = tp.maximum(tp.exp(leaves["log_sf2"][d]) - quad, VARIANCE_FLOOR)

        res = y[:, d] - mean
        inv_noise = tp.exp(-leaves["log_noise"][d])
        ll = -0.5 * (n * (LOG_2PI + leaves["log_noise"][d]) +
                     tp.tensor_sum(tp.multiply(res, res) + var) * inv_noise)

        trace = tp.tensor_sum(tp.multiply(tp.diag_part(kinv), sigma))
        logdet_k = 2.0 * tp.tensor_sum(tp.log(tp.diag_part(l)))
        logdet_s = tp.tensor_sum(leaves["q_log_sigma"][d])
        kl = 0.5 * (trace + tp.tensor_sum(tp.multiply(y1, y1)) - float(p) +
                    logdet_k - logdet_s)
        term = ll - kl
        total = term if total is None else total + term
    return total


def fit_narx(data, config: NarxConfig, seed: int = 0, iterations: int = 2000,
             learning_rate: float = 0.01, callback=None) -> NarxModel:
    """Maximize the regression bound with Adam; deterministic given the seed."""
    first = data if isinstance(data, Trajectory) else data[0]
    x, y = build_regressors(data, config)
    model = _init_model(x, y, first.input_dim, config, SeededRng(seed))
    flat = _flatten(model)
    adam = AdamState.initial(flat.size)
    failures = 0
    for it in range(iterations):
        try:
            tape = tp.Tape()
            leaves = {k: tape.leaf(v) for k, v in _narx_arrays(model).items()}
            bound = narx_elbo(leaves, x, y)
            grads = tp.grad(bound, [leaves[n] for n in NARX_FIELDS])
            gradient = -np.concatenate([g.ravel() for g in grads])
            gradient = clip_gradient(gradient)
            flat, adam = adam_step(adam, flat, gradient, learning_rate)
        except (NonFiniteGradient, NotPositiveDefinite):
            failures += 1
            if failures >= MAX_CONSECUTIVE_FAILURES:
                raise Diverged(f"{failures} consecutive failed steps "
                               f"at iteration {it}")
            continue
        failures = 0
        model = _unflatten(flat, model)
        if callback is not None:
            callback(it, bound.item())
    return model


class _EagerPredictor:
    """Per-dimension numpy predictor built once from a fitted model."""

    def __init__(self, model: NarxModel):
        self.model = model
        self.packs = []
        for d in range(model.obs_dim):
            kzz = ard_kernel_value(model.z[d], model.z[d],
                                   model.log_sf2[d], model.log_l2[d])
            l = tp.cholesky_value(kzz)
            y1 = _solve_tri(l, model.q_mu[d], lower=True, check_finite=False)
            w = _solve_tri(l.T, y1, lower=False, check_finite=False)
            linv = _solve_tri(l, np.eye(l.shape[0]), lower=True,
                              check_finite=False)
            kinv = linv.T @ linv
            b = kinv - (kinv * np.exp(model.q_log_sigma[d])) @ kinv
            cache = kernel_cache(model.z[d], model.log_sf2[d], model.log_l2[d])
            self.packs.append((w, b, cache, np.exp(model.log_sf2[d])))

    def __call__(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Predictive moments at rows of x; returns (mean, var), (n, D_y)."""
        means, variances = [], []
        for w, b, cache, sf2 in self.packs:
            kstar = ard_from_cache(x, cache)
            means.append(kstar @ w)
            quad = ((kstar @ b) * kstar).sum(axis=-1)
            variances.append(np.maximum(sf2 - quad, VARIANCE_FLOOR))
        return np.stack(means, axis=1), np.stack(variances, axis=1)


def narx_one_step(model: NarxModel, traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """One-step-ahead moments from true histories, targets are traj.y[h:]."""
    x, _ = build_regressors(traj, model.config)
    return _EagerPredictor(model)(x)


def narx_free_simulation(model: NarxModel, u: np.ndarray,
                         y_warm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean-propagation rollout over the remaining steps.

    ``u`` covers the full horizon (T, D_u); ``y_warm`` holds the first W >= h
    observed outputs.  Predicted means for steps W .. T-1 are fed back into
    the output history; returns those means and the one-step variances.
    """
    u = np.asarray(u, dtype=np.float64)
    y_warm = np.asarray(y_warm, dtype=np.float64)
    cfg = model.config
    w_len = y_warm.shape[0]
    if w_len < cfg.warmup:
        raise WindowTooShort(
            f"warm start of {w_len} steps is shorter than the history "
            f"window {cfg.warmup}")
    if u.ndim != 2 or u.shape[1] != model.input_dim or \
            y_warm.ndim != 2 or y_warm.shape[1] != model.obs_dim:
        raise DimensionMismatch(
            f"expected u (T, {model.input_dim}) and warm-start "
            f"(W, {model.obs_dim}), got {u.shape} and {y_warm.shape}")
    predict = _EagerPredictor(model)
    history = [y_warm[i] for i in range(w_len)]
    means, variances = [], []
    for t in range(w_len - 1, u.shape[0] - 1):
        parts = [history[t - lag] for lag in range(cfg.l_y)]
        parts += [u[t - lag] for lag in range(cfg.l_u)]
        x = np.concatenate(parts)[None, :]
        mean, var = predict(x)
        history.append(mean[0])
        means.append(mean[0])
        variances.append(var[0])
    if not means:
        empty = np.zeros((0, model.obs_dim))
        return empty, empty.copy()
    return np.asarray(means), np.asarray(variances)


def save_narx_checkpoint(model: NarxModel, path, seed=None,
                         normalization=None) -> None:
    """JSON checkpoint in the same style as the state-space model's."""
    doc = {
        "format": "narx-checkpoint",
        "version": 1,
        "model_type": "narx",
        "dims": {
            "obs_dim": model.obs_dim,
            "input_dim": model.input_dim,
            "l_y": model.config.l_y,
            "l_u": model.config.l_u,
            "n_inducing": model.config.n_inducing,
        },
        "params": {name: getattr(model, name).ravel().tolist()
                   for name in NARX_FIELDS},
        "seed": seed,
        "normalization": normalization,
    }
    text = json.dumps(doc, sort_keys=True, indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_narx_checkpoint(path) -> tuple[NarxModel, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    dims = doc["dims"]
    config = NarxConfig(l_y=dims["l_y"], l_u=dims["l_u"],
                        n_inducing=dims["n_inducing"])
    d_y, d_u, p = dims["obs_dim"], dims["input_dim"], dims["n_inducing"]
    r = config.regressor_dim(d_y, d_u)
    shapes = {
        "z": (d_y, p, r), "q_mu": (d_y, p), "q_log_sigma": (d_y, p),
        "log_sf2": (d_y,), "log_l2": (d_y, r), "log_noise": (d_y,),
    }
    fields = {name: np.asarray(doc["params"][name],
                               dtype=np.float64).reshape(shape)
              for name, shape in shapes.items()}
    meta = {k: doc.get(k) for k in ("model_type", "seed", "normalization")}
    return NarxModel(config=config, obs_dim=d_y, input_dim=d_u,
                     **fields), meta
