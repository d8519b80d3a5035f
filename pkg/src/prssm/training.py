"""Variational training loop: Adam on the negative evidence lower bound.

Two regimes are supported.  The full-gradient regime unrolls every training
trajectory end to end with the initial state fixed at N(0, I).  The
stochastic regime draws minibatches of subtrajectory windows, amortizes the
initial-state posterior through the recognition network, and rescales the
likelihood term so its expectation matches the full objective.  KL terms are
never rescaled; the initial-state KL is averaged over the windows in the
batch.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import model
from . import tape as tp
from .data import Trajectory
from .errors import (Diverged, DimensionMismatch, NonFiniteGradient,
                     NonFiniteState, NotPositiveDefinite, ParseError,
                     TrajectoryTooShort, WindowTooShort)
from .recognition import init_recognition, recognize_windows
from .rng import SeededRng

__all__ = [
    "TrainConfig",
    "TrainLogRow",
    "AdamState",
    "adam_step",
    "clip_gradient",
    "init_params",
    "field_slices",
    "sample_minibatch",
    "fit",
    "write_training_log",
]

GRAD_CLIP_NORM = 100.0
LR_DECAY_EVERY = 2000
LR_DECAY_FACTOR = 0.5
MAX_CONSECUTIVE_FAILURES = 10

# defaults for newly initialized models
INDUCING_RANGE = 2.0        # inducing inputs uniform on [-2, 2]
Q_MU_INIT_STD = 0.05
Q_SIGMA_INIT = 0.01 ** 2    # diagonal of each inducing-output covariance
PROCESS_NOISE_INIT = 0.002 ** 2
OBS_NOISE_INIT = 1.0 ** 2
SIGNAL_VARIANCE_INIT = 0.5 ** 2
LENGTHSCALE_SQ_INIT = 2.0


@dataclass(frozen=True)
class TrainConfig:
    """Training hyper-parameters; field names double as the JSON schema."""

    mode: str = "stochastic"
    iterations: int = 5000
    learning_rate: float = 0.01
    n_samples: int = 50
    n_inducing: int = 20
    latent_dim: int = 4
    batch_size: int = 10
    subtraj_len: int = 100
    recognition_window: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("full", "stochastic"):
            raise ParseError(f"mode must be 'full' or 'stochastic', "
                             f"got {self.mode!r}")
        for name in ("iterations", "n_samples", "n_inducing", "latent_dim",
                     "batch_size", "subtraj_len", "recognition_window"):
            if int(getattr(self, name)) < 1:
                raise ParseError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.learning_rate > 0.0:
            raise ParseError(f"learning_rate must be > 0, got {self.learning_rate}")

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid config JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ParseError("config JSON must be an object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ParseError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**raw)

    def to_json(self) -> str:
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"


@dataclass(frozen=True)
class TrainLogRow:
    iteration: int
    elbo: float
    expected_loglik: float
    inducing_kl: float
    init_state_kl: float


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators over the flattened parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int

    @classmethod
    def initial(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), step=0)


def adam_step(state: AdamState, flat: np.ndarray, gradient: np.ndarray,
              learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update minimizing along ``gradient``."""
    if not np.all(np.isfinite(gradient)):
        raise NonFiniteGradient("gradient contains NaN or Inf")
    if gradient.shape != flat.shape:
        raise DimensionMismatch(
            f"gradient shape {gradient.shape} != parameter shape {flat.shape}")
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * gradient
    v = beta2 * state.v + (1.0 - beta2) * gradient * gradient
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    new_flat = flat - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return new_flat, AdamState(m=m, v=v, step=step)


def clip_gradient(gradient: np.ndarray,
                  max_norm: float = GRAD_CLIP_NORM) -> np.ndarray:
    """Rescale to the given global L2 norm when it is exceeded."""
    norm = float(np.linalg.norm(gradient))
    if not np.isfinite(norm):
        raise NonFiniteGradient(f"gradient norm is {norm}")
    if norm > max_norm:
        return gradient * (max_norm / norm)
    return gradient


def init_params(config: TrainConfig, input_dim: int, obs_dim: int,
                rng: SeededRng,
                with_recognition: bool | None = None) -> model.PrssmParams:
    """Fresh parameters: smooth near-identity transitions, broad obs noise.

    Inducing inputs are spread uniformly over the normalized data range,
    inducing outputs start near zero so the transition is dominated by its
    identity mean, and the observation noise starts at unit variance so early
    iterations are not forced to chase individual points.
    """
    d_x, p = config.latent_dim, config.n_inducing
    d_in = d_x + input_dim
    if with_recognition is None:
        with_recognition = config.mode == "stochastic"
    z = rng.uniform(d_x * p * d_in, -INDUCING_RANGE, INDUCING_RANGE)
    q_mu = Q_MU_INIT_STD * rng.standard_normal(d_x * p)
    recognition = None
    if with_recognition:
        recognition = init_recognition(obs_dim, input_dim, d_x, rng,
                                       window=config.recognition_window)
    return model.PrssmParams(
        z=z.reshape(d_x, p, d_in),
        q_mu=q_mu.reshape(d_x, p),
        q_log_sigma=np.full((d_x, p), np.log(Q_SIGMA_INIT)),
        log_sf2=np.full(d_x, np.log(SIGNAL_VARIANCE_INIT)),
        log_l2=np.full((d_x, d_in), np.log(LENGTHSCALE_SQ_INIT)),
        log_process_noise=np.full(d_x, np.log(PROCESS_NOISE_INIT)),
        log_obs_noise=np.full(obs_dim, np.log(OBS_NOISE_INIT)),
        init_state_mean=np.zeros(d_x),
        init_state_log_var=np.zeros(d_x),
        recognition=recognition)


def field_slices(params: model.PrssmParams) -> dict[str, slice]:
    """Location of each trainable array within the flattened vector."""
    out, pos = {}, 0
    for name, arr in model.param_arrays(params).items():
        out[name] = slice(pos, pos + arr.size)
        pos += arr.size
    return out


def sample_minibatch(trajectories: list[Trajectory], n_batch: int, t_sub: int,
                     rng: SeededRng) -> list[Trajectory]:
    """Draw windows uniformly over all (trajectory, offset) pairs."""
    counts = [max(len(tr) - t_sub + 1, 0) for tr in trajectories]
    total = sum(counts)
    if total == 0:
        raise TrajectoryTooShort(
            f"no trajectory offers a window of {t_sub} steps "
            f"(lengths: {[len(tr) for tr in trajectories]})")
    bounds = np.cumsum(counts)
    draws = rng.integers(n_batch, 0, total)
    windows = []
    for d in draws:
        j = int(np.searchsorted(bounds, d, side="right"))
        offset = int(d) - (int(bounds[j - 1]) if j > 0 else 0)
        windows.append(trajectories[j].window(offset, t_sub))
    return windows


def _full_report(params: model.PrssmParams, trajectories: list[Trajectory],
                 n_samples: int, rng: SeededRng) -> model.ElboReport:
    """ELBO over whole trajectories on one tape, q(x_1) = N(0, I) fixed.

    The inducing-point KL enters once no matter how many trajectories there
    are; each trajectory contributes its own expected log-likelihood.
    """
    tape = tp.Tape()
    leaves = model.make_param_leaves(tape, params)
    pre, kl_z = model.transition_precompute(leaves, params.state_dim)
    x1_mean = np.zeros((1, params.state_dim))
    x1_logvar = np.zeros((1, params.state_dim))
    ll_total = None
    for tr in trajectories:
        x_stacked, _, _ = model.rollout_lanes(
            pre, leaves["log_process_noise"], tr.u[:, None, :],
            x1_mean, x1_logvar, n_samples, rng)
        y_tiled = np.repeat(tr.y[:, None, :], n_samples, axis=1)
        ll = model.likelihood_tensor(x_stacked, y_tiled,
                                     leaves["log_obs_noise"], n_samples)
        ll_total = ll if ll_total is None else ll_total + ll
    total = ll_total - kl_z
    names = list(model.param_arrays(params))
    grads = tp.grad(total, [leaves[n] for n in names])
    return model.ElboReport(
        elbo=total.item(), expected_loglik=ll_total.item(),
        inducing_kl=kl_z.item(), init_state_kl=0.0,
        gradient=np.concatenate([g.ravel() for g in grads]))


def _stochastic_report(params: model.PrssmParams, windows: list[Trajectory],
                       total_steps: int, n_samples: int,
                       rng: SeededRng) -> model.ElboReport:
    """Minibatch ELBO with recognition-model q(x_1) per window.

    The likelihood sum over the batch is scaled by total_steps / (B * T_sub)
    so it is an unbiased estimate of the full-data likelihood term.  The
    windows feeding the recognition network stay part of the likelihood.
    """
    tape = tp.Tape()
    leaves = model.make_param_leaves(tape, params)
    pre, kl_z = model.transition_precompute(leaves, params.state_dim)
    u_stack = np.stack([w.u for w in windows], axis=1)  # (T_sub, B, D_u)
    y_stack = np.stack([w.y for w in windows], axis=1)
    y_batch = np.stack([w.y for w in windows], axis=0)  # (B, T_sub, D_y)
    u_batch = np.stack([w.u for w in windows], axis=0)
    mu, logvar = recognize_windows(leaves["rec_w1"], leaves["rec_b1"],
                                   leaves["rec_w2"], leaves["rec_b2"],
                                   params.recognition, y_batch, u_batch)
    x_stacked, _, _ = model.rollout_lanes(
        pre, leaves["log_process_noise"], u_stack, mu, logvar, n_samples, rng)
    y_tiled = np.tile(y_stack, (1, n_samples, 1))  # lane i*B + b
    ll = model.likelihood_tensor(x_stacked, y_tiled, leaves["log_obs_noise"],
                                 n_samples)
    t_sub, n_windows = u_stack.shape[0], u_stack.shape[1]
    scale = total_steps / float(n_windows * t_sub)
    ll_scaled = scale * ll
    kl_x1 = model.init_state_kl_tensor(mu, logvar)
    total = ll_scaled - kl_z - kl_x1
    names = list(model.param_arrays(params))
    grads = tp.grad(total, [leaves[n] for n in names])
    return model.ElboReport(
        elbo=total.item(), expected_loglik=ll_scaled.item(),
        inducing_kl=kl_z.item(), init_state_kl=kl_x1.item(),
        gradient=np.concatenate([g.ravel() for g in grads]))


def fit(trajectories, config: TrainConfig,
        params: model.PrssmParams | None = None,
        callback=None) -> tuple[model.PrssmParams, list[TrainLogRow]]:
    """Train a model on one or more trajectories.

    Returns the final parameters and one log row per completed iteration.
    Iterations whose gradient or state blows up are skipped without an
    update; ten such failures in a row abort with Diverged.
    """
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    trajectories = list(trajectories)
    if not trajectories:
        raise TrajectoryTooShort("no training trajectories given")
    input_dim, obs_dim = trajectories[0].input_dim, trajectories[0].obs_dim
    for tr in trajectories[1:]:
        if tr.input_dim != input_dim or tr.obs_dim != obs_dim:
            raise DimensionMismatch("trajectories disagree on channel counts")
    if config.mode == "stochastic" and \
            config.subtraj_len < config.recognition_window:
        raise WindowTooShort(
            f"subtrajectories of {config.subtraj_len} steps cannot feed a "
            f"recognition window of {config.recognition_window}")

    master = SeededRng(config.seed)
    if params is None:
        params = init_params(config, input_dim, obs_dim, master.substream(1))
    if obs_dim != params.obs_dim or input_dim != params.input_dim:
        raise DimensionMismatch(
            f"data channels ({input_dim} in, {obs_dim} out) do not match "
            f"model ({params.input_dim} in, {params.obs_dim} out)")
    total_steps = sum(len(tr) for tr in trajectories)

    flat = model.flatten_params(params)
    adam = AdamState.initial(flat.size)
    slices = field_slices(params)
    frozen = ("init_state_mean", "init_state_log_var")

    rows: list[TrainLogRow] = []
    consecutive_failures = 0
    for it in range(config.iterations):
        lr = config.learning_rate * LR_DECAY_FACTOR ** (it // LR_DECAY_EVERY)
        iter_rng = master.substream(it + 2)
        try:
            if config.mode == "full":
                report = _full_report(params, trajectories,
                                      config.n_samples, iter_rng)
            else:
                windows = sample_minibatch(trajectories, config.batch_size,
                                           config.subtraj_len, iter_rng)
                report = _stochastic_report(params, windows, total_steps,
                                            config.n_samples, iter_rng)
            gradient = -report.gradient  # minimize the negative ELBO
            for name in frozen:
                gradient[slices[name]] = 0.0
            gradient = clip_gradient(gradient)
            flat, adam = adam_step(adam, flat, gradient, lr)
        except (NonFiniteGradient, NonFiniteState, NotPositiveDefinite):
            consecutive_failures += 1
            if consecutive_failures >= MAX_CONSECUTIVE_FAILURES:
                raise Diverged(
                    f"{consecutive_failures} consecutive failed steps "
                    f"at iteration {it}")
            continue
        consecutive_failures = 0
        params = model.unflatten_params(flat, params)
        rows.append(TrainLogRow(iteration=it, elbo=report.elbo,
                                expected_loglik=report.expected_loglik,
                                inducing_kl=report.inducing_kl,
                                init_state_kl=report.init_state_kl))
        if callback is not None:
            callback(it, report)
    return params, rows


def write_training_log(rows: list[TrainLogRow], path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "elbo", "loglik", "kl_z", "kl_x1"])
        for row in rows:
            writer.writerow([row.iteration, repr(float(row.elbo)),
                             repr(float(row.expected_loglik)),
                             repr(float(row.inducing_kl)),
                             repr(float(row.init_state_kl))])
