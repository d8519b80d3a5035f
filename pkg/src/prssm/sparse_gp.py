"""Variational sparse GP for one latent dimension.

Each latent dimension owns a set of inducing inputs ζ_d and an explicit
Gaussian over the inducing outputs, q(z_d) = N(μ_d, Σ_d) with diagonal Σ_d
(mean-field).  Conditioning on z_d and marginalizing it out gives Gaussian
predictive moments at a query x̂:

    μ(x̂)  = m(x̂) + α(x̂) (μ_d − m(ζ_d)),      α(x̂) = k_{x̂,ζ} K_{ζ,ζ}^{-1}
    σ²(x̂) = k(x̂,x̂) − α(x̂) (K_{ζ,ζ} − Σ_d) α(x̂)ᵀ

The eager functions (:func:`predict`, :func:`kl_to_prior`) operate on plain
arrays for one dimension at a time.  The taped path
(:func:`precompute_transition`, :func:`predict_batch`) stacks all latent
dimensions and factorizes K_{ζ,ζ} once per ELBO evaluation, so each rollout
step costs one fused kernel evaluation and two batched matmuls instead of
per-step triangular solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import tape as tp
from .errors import DimensionMismatch, NonPositiveVariance
from .kernels import (SeArdKernel, TransitionMeanFn, ard_kernel,
                      kernel_cache, kernel_matrix)
from .tape import Tensor, cholesky_value

__all__ = [
    "SparseGpDim",
    "GpPredictive",
    "predict",
    "kl_to_prior",
    "GpPrecomp",
    "precompute_transition",
    "predict_batch",
]

VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class SparseGpDim:
    """One latent dimension's sparse GP: inducing points and q(z_d)."""

    inducing_inputs: np.ndarray  # (P, D_x + D_u)
    q_mean: np.ndarray  # (P,)
    q_diag: np.ndarray  # (P,) diagonal of Σ_d, entries > 0
    kernel: SeArdKernel
    mean_fn: TransitionMeanFn
    dim: int

    def __post_init__(self):
        z = np.asarray(self.inducing_inputs)
        if z.ndim != 2 or z.shape[0] < 1:
            raise DimensionMismatch(f"inducing inputs must be (P, D), got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise NonPositiveVariance("inducing inputs must be finite")
        if np.any(np.asarray(self.q_diag) <= 0.0):
            raise NonPositiveVariance("q(z) diagonal variances must be positive")


@dataclass(frozen=True)
class GpPredictive:
    mean: float
    variance: float


def _mean_at_inducing(gp: SparseGpDim) -> np.ndarray:
    return gp.inducing_inputs[:, gp.dim]


def predict(gp: SparseGpDim, query) -> GpPredictive:
    """Predictive moments of the transition GP at one query point x̂ = (x, u)."""
    x = np.asarray(query, dtype=np.float64).reshape(-1)
    if x.shape[0] != gp.kernel.input_dim:
        raise DimensionMismatch(
            f"query has dimension {x.shape[0]}, expected {gp.kernel.input_dim}")
    kzz = kernel_matrix(gp.kernel, gp.inducing_inputs, gp.inducing_inputs)
    l = cholesky_value(kzz)
    kxz = kernel_matrix(gp.kernel, x[None, :], gp.inducing_inputs)[0]
    y1 = solve_triangular(l, kxz, lower=True, check_finite=False)
    alpha = solve_triangular(l, y1, lower=True, trans="T", check_finite=False)
    mean = float(x[gp.dim] + alpha @ (gp.q_mean - _mean_at_inducing(gp)))
    var = gp.kernel.signal_variance - float(y1 @ y1) + float(alpha * alpha @ gp.q_diag)
    return GpPredictive(mean=mean, variance=max(var, VARIANCE_FLOOR))


def kl_to_prior(gp: SparseGpDim) -> float:
    """KL(q(z_d) ‖ p(z_d; ζ_d)) between q and the GP prior at the inducing inputs."""
    kzz = kernel_matrix(gp.kernel, gp.inducing_inputs, gp.inducing_inputs)
    l = cholesky_value(kzz)
    p = gp.q_mean.shape[0]
    r = gp.q_mean - _mean_at_inducing(gp)
    y1 = solve_triangular(l, r, lower=True, check_finite=False)
    linv = solve_triangular(l, np.eye(p), lower=True, check_finite=False)
    kinv_diag = (linv * linv).sum(axis=0)
    trace = float(kinv_diag @ gp.q_diag)
    logdet_k = 2.0 * float(np.log(np.diagonal(l)).sum())
    logdet_s = float(np.log(gp.q_diag).sum())
    return 0.5 * (trace + float(y1 @ y1) - p + logdet_k - logdet_s)


@dataclass
class GpPrecomp:
    """Per-ELBO-evaluation cache shared by every rollout step.

    All fields are taped tensors, stacked over the D_x latent dimensions:
    ``w = K^{-1}(μ − m(ζ))`` gives the predictive mean correction and
    ``b = K^{-1}(K − Σ)K^{-1}`` the quadratic form in the variance.
    """

    z: Tensor  # (D_x, P, D_in)
    log_sf2: Tensor  # (D_x,)
    log_l2: Tensor  # (D_x, D_in)
    w: Tensor  # (D_x, P, 1)
    b: Tensor  # (D_x, P, P)
    sf2_col: Tensor  # (D_x, 1)
    state_dim: int
    kernel_cache: tuple | None = None  # z-side forward cache, values only


def precompute_transition(z, mu, log_sigma, log_sf2, log_l2,
                          state_dim: int) -> tuple[GpPrecomp, Tensor]:
    """Factorize each K_{ζ,ζ} once; return the step predictor pack and Σ_d KL.

    Parameters are taped tensors stacked over latent dimensions: ``z`` is
    (D_x, P, D_in), ``mu`` and ``log_sigma`` are (D_x, P), ``log_sf2`` is
    (D_x,) and ``log_l2`` is (D_x, D_in).  The returned KL is the sum over
    dimensions of KL(q(z_d) ‖ p(z_d)).
    """
    d_x = z.shape[0]
    p = z.shape[1]
    eye = np.eye(p)
    w_parts, b_parts, kl_total = [], [], None
    for d in range(d_x):
        z_d = z[d]
        kzz = ard_kernel(z_d, z_d, log_sf2[d], log_l2[d])
        l = tp.cholesky(kzz)
        r = mu[d] - z_d[:, d]  # identity mean at the inducing inputs
        y1 = tp.solve_triangular(l, r, lower=True)
        w_d = tp.solve_triangular(l, y1, lower=True, trans=True)
        linv = tp.solve_triangular(l, eye, lower=True)
        kinv = tp.matmul(tp.transpose(linv), linv)
        sigma = tp.exp(log_sigma[d])
        # K^{-1} Σ K^{-1} with diagonal Σ via column scaling
        b_d = kinv - tp.matmul(tp.multiply(kinv, sigma), kinv)
        w_parts.append(w_d)
        b_parts.append(b_d)
        trace = tp.tensor_sum(tp.multiply(tp.diag_part(kinv), sigma))
        logdet_k = 2.0 * tp.tensor_sum(tp.log(tp.diag_part(l)))
        logdet_s = tp.tensor_sum(log_sigma[d])
        quad = tp.tensor_sum(tp.multiply(y1, y1))
        kl_d = 0.5 * (trace + quad - float(p) + logdet_k - logdet_s)
        kl_total = kl_d if kl_total is None else kl_total + kl_d
    w = tp.reshape(tp.stack(w_parts, axis=0), (d_x, p, 1))
    b = tp.stack(b_parts, axis=0)
    sf2_col = tp.reshape(tp.exp(log_sf2), (d_x, 1))
    pre = GpPrecomp(z=z, log_sf2=log_sf2, log_l2=log_l2, w=w, b=b,
                    sf2_col=sf2_col, state_dim=state_dim,
                    kernel_cache=kernel_cache(z.value, log_sf2.value,
                                              log_l2.value))
    return pre, kl_total


def predict_batch(pre: GpPrecomp, xhat: Tensor) -> tuple[Tensor, Tensor]:
    """Predictive moments at a batch of queries, all latent dims at once.

    ``xhat`` is (M, D_in) with the state block first.  Returns mean and
    variance as (D_x, M) tensors; variance is clamped at the floor 1e-12.
    """
    kstar = ard_kernel(xhat, pre.z, pre.log_sf2, pre.log_l2,
                       cache=pre.kernel_cache)  # (D_x, M, P)
    m = xhat.shape[0]
    state_t = tp.transpose(xhat[:, : pre.state_dim])  # (D_x, M)
    mean = state_t + tp.reshape(tp.matmul(kstar, pre.w), (pre.state_dim, m))
    quad = tp.tensor_sum(tp.multiply(tp.matmul(kstar, pre.b), kstar), axis=-1)
    var = tp.maximum(pre.sf2_col - quad, VARIANCE_FLOOR)
    return mean, var
