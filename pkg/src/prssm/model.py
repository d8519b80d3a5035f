"""PR-SSM generative model: latent rollout, likelihood, ELBO, prediction.

The model couples one sparse GP per latent dimension (identity-on-state mean,
SE-ARD kernel) with diagonal process and observation noise and a fixed
selector observation y_t = C x_t, C = [I, 0].  Training maximizes the ELBO

    L = Σ_t E_q[log N(y_t | C x_t, diag σ²_y)] − Σ_d KL(q(z_d) ‖ p(z_d))
        − KL(q(x_1) ‖ N(0, I))                                  (optional)

where the expectation is estimated by unrolling N reparameterized sample
paths through the transition GPs, so the gradient is propagated back through
time.  All heavy lifting happens on stacked (lane) arrays: one lane per
(sample, sub-trajectory window) pair, every latent dimension batched inside
each tape primitive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import tape as tp
from .errors import DimensionMismatch, NonFiniteState
from .recognition import DiagonalGaussian, RecognitionParams
from .rng import SeededRng
from .sparse_gp import GpPrecomp, precompute_transition, predict_batch
from .tape import Tape, Tensor

__all__ = [
    "PrssmParams",
    "ObservationModel",
    "LatentRollout",
    "ElboReport",
    "rollout",
    "log_likelihood",
    "elbo",
    "predict_free_simulation",
    "flatten_params",
    "unflatten_params",
    "save_checkpoint",
    "load_checkpoint",
]

LOG_2PI = float(np.log(2.0 * np.pi))

PARAM_FIELDS = ("z", "q_mu", "q_log_sigma", "log_sf2", "log_l2",
                "log_process_noise", "log_obs_noise",
                "init_state_mean", "init_state_log_var")
RECOGNITION_FIELDS = ("w1", "b1", "w2", "b2")


@dataclass(frozen=True)
class PrssmParams:
    """All trainable quantities, stacked over latent dimensions.

    Variances are stored as logs: ``q_log_sigma`` holds the diagonal of each
    Σ_d, ``log_sf2``/``log_l2`` the kernel hyper-parameters, and the noise
    fields the process/observation variances.
    """

    z: np.ndarray  # (D_x, P, D_x + D_u) inducing inputs
    q_mu: np.ndarray  # (D_x, P)
    q_log_sigma: np.ndarray  # (D_x, P)
    log_sf2: np.ndarray  # (D_x,)
    log_l2: np.ndarray  # (D_x, D_x + D_u)
    log_process_noise: np.ndarray  # (D_x,)
    log_obs_noise: np.ndarray  # (D_y,)
    init_state_mean: np.ndarray  # (D_x,)
    init_state_log_var: np.ndarray  # (D_x,)
    recognition: RecognitionParams | None = None

    def __post_init__(self):
        if self.obs_dim > self.state_dim:
            raise DimensionMismatch(
                f"obs dim {self.obs_dim} exceeds latent dim {self.state_dim}")

    @property
    def state_dim(self) -> int:
        return self.z.shape[0]

    @property
    def n_inducing(self) -> int:
        return self.z.shape[1]

    @property
    def input_dim(self) -> int:
        return self.z.shape[2] - self.z.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.log_obs_noise.shape[0]


@dataclass(frozen=True)
class ObservationModel:
    """Fixed selector C = [I, 0]: the first D_y latent entries are observed."""

    obs_dim: int
    state_dim: int

    @property
    def matrix(self) -> np.ndarray:
        c = np.zeros((self.obs_dim, self.state_dim))
        c[:, : self.obs_dim] = np.eye(self.obs_dim)
        return c

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x[..., : self.obs_dim]


@dataclass
class LatentRollout:
    """N sampled latent paths plus the tape and tensors backing them."""

    samples: np.ndarray  # (N, T, D_x)
    gp_means: np.ndarray  # (T-1, D_x, N) transition moments at each step
    gp_vars: np.ndarray  # (T-1, D_x, N)
    tape: Tape
    x_stacked: Tensor  # (T, N, D_x)
    leaves: dict[str, Tensor]
    n_samples: int


@dataclass
class ElboReport:
    elbo: float
    expected_loglik: float
    inducing_kl: float
    init_state_kl: float
    gradient: np.ndarray | None = None


def param_arrays(params: PrssmParams) -> dict[str, np.ndarray]:
    """Trainable arrays keyed by field name, in flattening order."""
    out = {name: getattr(params, name) for name in PARAM_FIELDS}
    if params.recognition is not None:
        for name in RECOGNITION_FIELDS:
            out["rec_" + name] = getattr(params.recognition, name)
    return out


def flatten_params(params: PrssmParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in param_arrays(params).values()])


def unflatten_params(flat: np.ndarray, template: PrssmParams) -> PrssmParams:
    arrays = param_arrays(template)
    total = sum(a.size for a in arrays.values())
    if flat.shape != (total,):
        raise DimensionMismatch(f"expected flat vector of length {total}, "
                                f"got shape {flat.shape}")
    pos, fields, rec_fields = 0, {}, {}
    for name, a in arrays.items():
        chunk = flat[pos: pos + a.size].reshape(a.shape).copy()
        pos += a.size
        if name.startswith("rec_"):
            rec_fields[name[4:]] = chunk
        else:
            fields[name] = chunk
    recognition = template.recognition
    if rec_fields:
        recognition = replace(template.recognition, **rec_fields)
    return PrssmParams(recognition=recognition, **fields)


def make_param_leaves(tape: Tape | None, params: PrssmParams) -> dict[str, Tensor]:
    """One tensor per trainable array; constants when no tape is given."""
    if tape is None:
        return {k: tp.as_tensor(v) for k, v in param_arrays(params).items()}
    return {k: tape.leaf(v) for k, v in param_arrays(params).items()}


def transition_precompute(leaves: dict[str, Tensor],
                          state_dim: int) -> tuple[GpPrecomp, Tensor]:
    return precompute_transition(leaves["z"], leaves["q_mu"],
                                 leaves["q_log_sigma"], leaves["log_sf2"],
                                 leaves["log_l2"], state_dim)


def rollout_lanes(pre: GpPrecomp, log_process_noise: Tensor, u_lanes: np.ndarray,
                  x1_mean, x1_logvar, n_samples: int, rng: SeededRng,
                  zero_noise: bool = False):
    """Unroll reparameterized sample paths for a stack of windows.

    ``u_lanes`` is (T, B, D_u) with B windows; ``x1_mean``/``x1_logvar`` are
    (B, D_x) tensors or arrays.  Lanes are ordered sample-major: lane i*B + b
    is sample i of window b.  Returns the (T, M, D_x) stacked states plus the
    per-step GP means and variances, each (D_x, M).
    """
    t_len, n_windows, _ = u_lanes.shape
    d_x = pre.state_dim
    m_lanes = n_samples * n_windows
    x1_mean = tp.as_tensor(x1_mean)
    x1_logvar = tp.as_tensor(x1_logvar)

    shape0 = (n_samples, n_windows, d_x)
    eps0 = np.zeros(shape0) if zero_noise else \
        rng.standard_normal(n_samples * n_windows * d_x).reshape(shape0)
    x = tp.reshape(x1_mean + eps0 * tp.exp(0.5 * x1_logvar), (m_lanes, d_x))

    proc_var = tp.reshape(tp.exp(log_process_noise), (d_x, 1))
    u_tiled = np.tile(u_lanes, (1, n_samples, 1))  # lane i*B + b gets window b

    xs, means, variances = [x], [], []
    for t in range(t_len - 1):
        xhat = tp.concatenate([x, u_tiled[t]], axis=1)
        mean, var = predict_batch(pre, xhat)
        std = tp.sqrt(var + proc_var)
        eps = np.zeros((d_x, m_lanes)) if zero_noise else \
            rng.standard_normal(m_lanes * d_x).reshape(d_x, m_lanes)
        x = tp.transpose(mean + eps * std)
        if not np.all(np.isfinite(x.value)):
            raise NonFiniteState(f"latent state diverged at step {t + 1}")
        xs.append(x)
        means.append(mean)
        variances.append(var)
    return tp.stack(xs, axis=0), means, variances


def rollout(params: PrssmParams, u: np.ndarray, q_x1: DiagonalGaussian,
            n_samples: int, rng: SeededRng, zero_noise: bool = False,
            tape: Tape | None = None) -> LatentRollout:
    """Sample N latent paths through the transition GPs for one trajectory."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != params.input_dim:
        raise DimensionMismatch(
            f"inputs must be (T, {params.input_dim}), got {u.shape}")
    own_tape = tape if tape is not None else Tape()
    leaves = make_param_leaves(own_tape, params)
    pre, _ = transition_precompute(leaves, params.state_dim)
    x_stacked, means, variances = rollout_lanes(
        pre, leaves["log_process_noise"], u[:, None, :],
        q_x1.mean[None, :], np.log(q_x1.variance)[None, :],
        n_samples, rng, zero_noise=zero_noise)
    empty = np.zeros((0, params.state_dim, n_samples))
    return LatentRollout(
        samples=np.swapaxes(x_stacked.value, 0, 1).copy(),
        gp_means=np.stack([m.value for m in means]) if means else empty,
        gp_vars=np.stack([v.value for v in variances]) if variances else empty,
        tape=own_tape, x_stacked=x_stacked, leaves=leaves,
        n_samples=n_samples)


def likelihood_tensor(x_stacked: Tensor, y_tiled: np.ndarray,
                      log_obs_noise: Tensor, n_samples: int) -> Tensor:
    """Monte Carlo expected log-likelihood Σ_t (1/N) Σ_i log N(y_t | C x̃, σ²_y).

    ``x_stacked`` is (T, M, D_x) and ``y_tiled`` (T, M, D_y), lanes aligned.
    Windows (lanes beyond the sample axis) are summed, samples averaged.
    """
    t_len, m_lanes, _ = x_stacked.shape
    d_y = y_tiled.shape[2]
    n_windows = m_lanes // n_samples
    res = x_stacked[:, :, :d_y] - y_tiled
    weighted = tp.multiply(tp.multiply(res, res), tp.exp(-log_obs_noise))
    quad = tp.tensor_sum(weighted) * (1.0 / n_samples)
    log_norm = t_len * n_windows * (
        d_y * LOG_2PI + tp.tensor_sum(log_obs_noise))
    return -0.5 * (quad + log_norm)


def log_likelihood(params: PrssmParams, roll: LatentRollout, y: np.ndarray) -> float:
    """Expected Gaussian log-density of observations under a rollout."""
    y = np.asarray(y, dtype=np.float64)
    t_len = roll.x_stacked.shape[0]
    if y.ndim != 2 or y.shape != (t_len, params.obs_dim):
        raise DimensionMismatch(
            f"observations must be ({t_len}, {params.obs_dim}), got {y.shape}")
    y_tiled = np.repeat(y[:, None, :], roll.x_stacked.shape[1], axis=1)
    ll = likelihood_tensor(roll.x_stacked, y_tiled,
                           roll.leaves["log_obs_noise"], roll.n_samples)
    return ll.item()


def init_state_kl_tensor(mean: Tensor, logvar: Tensor) -> Tensor:
    """Mean over windows of KL(N(μ, diag e^logvar) ‖ N(0, I))."""
    n_windows = mean.shape[0]
    per = tp.exp(logvar) + tp.multiply(mean, mean) - 1.0 - logvar
    return 0.5 * tp.tensor_sum(per) * (1.0 / n_windows)


def elbo(params: PrssmParams, u: np.ndarray, y: np.ndarray, n_samples: int,
         rng: SeededRng, include_init_kl: bool = False) -> ElboReport:
    """Single-trajectory ELBO with gradient, q(x_1) taken from the parameters."""
    u = np.asarray(u, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if u.shape[0] != y.shape[0]:
        raise DimensionMismatch(
            f"input and output lengths differ: {u.shape[0]} vs {y.shape[0]}")
    tape = Tape()
    leaves = make_param_leaves(tape, params)
    pre, kl_z = transition_precompute(leaves, params.state_dim)
    x1_mean = tp.reshape(leaves["init_state_mean"], (1, params.state_dim))
    x1_logvar = tp.reshape(leaves["init_state_log_var"], (1, params.state_dim))
    x_stacked, _, _ = rollout_lanes(pre, leaves["log_process_noise"],
                                    u[:, None, :], x1_mean, x1_logvar,
                                    n_samples, rng)
    y_tiled = np.repeat(y[:, None, :], n_samples, axis=1)
    ll = likelihood_tensor(x_stacked, y_tiled, leaves["log_obs_noise"], n_samples)
    if include_init_kl:
        kl_x1 = init_state_kl_tensor(x1_mean, x1_logvar)
        total = ll - kl_z - kl_x1
        kl_x1_value = kl_x1.item()
    else:
        total = ll - kl_z
        kl_x1_value = 0.0
    names = list(param_arrays(params))
    grads = tp.grad(total, [leaves[n] for n in names])
    gradient = np.concatenate([g.ravel() for g in grads])
    return ElboReport(elbo=total.item(), expected_loglik=ll.item(),
                      inducing_kl=kl_z.item(), init_state_kl=kl_x1_value,
                      gradient=gradient)


def predict_free_simulation(params: PrssmParams, u: np.ndarray,
                            q_x1: DiagonalGaussian, n_samples: int,
                            rng: SeededRng, zero_noise: bool = False
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Sample-based free simulation: per-step output mean and variance.

    The predictive variance is the across-sample variance of C x̃_t plus the
    observation noise, so it never falls below σ²_y.  No tape is built.
    """
    u = np.asarray(u, dtype=np.float64)
    leaves = make_param_leaves(None, params)
    pre, _ = transition_precompute(leaves, params.state_dim)
    x_stacked, _, _ = rollout_lanes(pre, leaves["log_process_noise"],
                                    u[:, None, :], q_x1.mean[None, :],
                                    np.log(q_x1.variance)[None, :],
                                    n_samples, rng, zero_noise=zero_noise)
    obs = x_stacked.value[:, :, : params.obs_dim]
    obs_noise = np.exp(params.log_obs_noise)
    return obs.mean(axis=1), obs.var(axis=1) + obs_noise[None, :]


def _checkpoint_payload(params: PrssmParams, meta: dict) -> dict:
    doc = {
        "format": "prssm-checkpoint",
        "version": 1,
        "dims": {
            "state_dim": params.state_dim,
            "input_dim": params.input_dim,
            "obs_dim": params.obs_dim,
            "n_inducing": params.n_inducing,
        },
        "params": {name: getattr(params, name).ravel().tolist()
                   for name in PARAM_FIELDS},
        "recognition": None,
    }
    if params.recognition is not None:
        rec = params.recognition
        doc["recognition"] = {
            "window": rec.window,
            "hidden": rec.hidden_dim,
            **{name: getattr(rec, name).ravel().tolist()
               for name in RECOGNITION_FIELDS},
        }
    doc.update(meta)
    return doc


def save_checkpoint(params: PrssmParams, path, seed=None,
                    normalization=None, model_type: str = "prssm") -> None:
    """Write the model as a JSON document that round-trips bit-exactly."""
    doc = _checkpoint_payload(params, {
        "model_type": model_type,
        "seed": seed,
        "normalization": normalization,
    })
    text = json.dumps(doc, sort_keys=True, indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[PrssmParams, dict]:
    """Load a checkpoint; returns the parameters and the metadata dict."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    dims = doc["dims"]
    d_x, d_u = dims["state_dim"], dims["input_dim"]
    d_y, p = dims["obs_dim"], dims["n_inducing"]
    d_in = d_x + d_u
    shapes = {
        "z": (d_x, p, d_in), "q_mu": (d_x, p), "q_log_sigma": (d_x, p),
        "log_sf2": (d_x,), "log_l2": (d_x, d_in),
        "log_process_noise": (d_x,), "log_obs_noise": (d_y,),
        "init_state_mean": (d_x,), "init_state_log_var": (d_x,),
    }
    fields = {name: np.asarray(doc["params"][name], dtype=np.float64).reshape(shape)
              for name, shape in shapes.items()}
    recognition = None
    if doc.get("recognition") is not None:
        rd = doc["recognition"]
        window, hidden = rd["window"], rd["hidden"]
        n_in = window * (d_y + d_u)
        recognition = RecognitionParams(
            window=window,
            w1=np.asarray(rd["w1"], dtype=np.float64).reshape(n_in, hidden),
            b1=np.asarray(rd["b1"], dtype=np.float64),
            w2=np.asarray(rd["w2"], dtype=np.float64).reshape(hidden, 2 * d_x),
            b2=np.asarray(rd["b2"], dtype=np.float64))
    meta = {k: doc.get(k) for k in ("model_type", "seed", "normalization")}
    return PrssmParams(recognition=recognition, **fields), meta
