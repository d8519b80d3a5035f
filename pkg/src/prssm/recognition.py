"""Recognition model: map the first L observations/inputs to q(x_1).

A small feed-forward network h(y_{1:L}, u_{1:L}) producing the mean and
log-variance of a diagonal Gaussian over the initial latent state.  Acting as
a smoother over the leading window, it replaces the uninformative N(0, I)
initial state when training on sub-trajectories, where every window starts at
an unknown point of the state space.

Architecture: flatten the window to L*(D_y+D_u) features, one tanh hidden
layer of width H, linear readout of 2*D_x values.  Observations and inputs
enter as constants; gradients flow only into the network weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .errors import WindowTooShort
from .rng import SeededRng
from .tape import Tensor

__all__ = [
    "DiagonalGaussian",
    "RecognitionParams",
    "init_recognition",
    "recognize",
    "recognize_windows",
]

DEFAULT_WINDOW = 16
DEFAULT_HIDDEN = 32
WEIGHT_INIT_STD = 0.05


@dataclass(frozen=True)
class DiagonalGaussian:
    """Diagonal Gaussian with per-dimension mean and variance."""

    mean: np.ndarray
    variance: np.ndarray


@dataclass(frozen=True)
class RecognitionParams:
    """Weights of the two-layer recognition network plus its window length."""

    window: int
    w1: np.ndarray  # (L*(D_y+D_u), H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, 2*D_x)
    b2: np.ndarray  # (2*D_x,)

    @property
    def state_dim(self) -> int:
        return self.w2.shape[1] // 2

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]


def init_recognition(obs_dim: int, input_dim: int, state_dim: int,
                     rng: SeededRng, window: int = DEFAULT_WINDOW,
                     hidden: int = DEFAULT_HIDDEN) -> RecognitionParams:
    """Near-zero weights and zero biases, so the initial output is ≈ N(0, I)."""
    n_in = window * (obs_dim + input_dim)
    w1 = WEIGHT_INIT_STD * rng.standard_normal(n_in * hidden).reshape(n_in, hidden)
    w2 = WEIGHT_INIT_STD * rng.standard_normal(hidden * 2 * state_dim).reshape(
        hidden, 2 * state_dim)
    return RecognitionParams(window=window, w1=w1, b1=np.zeros(hidden),
                             w2=w2, b2=np.zeros(2 * state_dim))


def _flatten_windows(rec: RecognitionParams, y, u) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if y.ndim == 2:
        y, u = y[None], u[None]
    if y.shape[1] < rec.window or u.shape[1] < rec.window:
        raise WindowTooShort(
            f"recognition needs {rec.window} steps, got y:{y.shape[1]} u:{u.shape[1]}")
    y = y[:, : rec.window]
    u = u[:, : rec.window]
    b = y.shape[0]
    return np.concatenate([y.reshape(b, -1), u.reshape(b, -1)], axis=1)


def recognize_windows(w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor,
                      rec: RecognitionParams, y, u) -> tuple[Tensor, Tensor]:
    """Taped batched recognition: (B, L, D) windows -> (B, D_x) mean and logvar."""
    feats = _flatten_windows(rec, y, u)
    h = tp.tanh(tp.matmul(feats, w1) + b1)
    out = tp.matmul(h, w2) + b2
    d_x = rec.state_dim
    return out[:, :d_x], out[:, d_x:]


def recognize(rec: RecognitionParams, y, u) -> DiagonalGaussian:
    """q(x_1) for one window of exactly L observation/input steps."""
    mu, logvar = recognize_windows(tp.as_tensor(rec.w1), tp.as_tensor(rec.b1),
                                   tp.as_tensor(rec.w2), tp.as_tensor(rec.b2),
                                   rec, y, u)
    return DiagonalGaussian(mean=mu.value[0].copy(),
                            variance=np.exp(logvar.value[0]))
