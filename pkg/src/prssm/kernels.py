"""Squared-exponential ARD kernel and the identity-on-state mean function.

Hyper-parameters live in log space (log signal variance, log squared
lengthscales) so optimization stays unconstrained.  The kernel is exposed two
ways: eager helpers (:func:`kernel_value`, :func:`kernel_matrix`) operating on
plain arrays, and :func:`ard_kernel`, a single fused tape primitive whose
backward pass is written by hand.  Fusing matters because the kernel sits in
the innermost rollout loop; composing it from elementwise primitives would
multiply the tape length by the number of input dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as tp
from .errors import DimensionMismatch, IndexOutOfRange

__all__ = [
    "SeArdKernel",
    "TransitionMeanFn",
    "kernel_value",
    "kernel_matrix",
    "mean_vector",
    "ard_kernel",
    "ard_kernel_value",
]


@dataclass(frozen=True)
class SeArdKernel:
    """SE-ARD hyper-parameters: log signal variance and per-dim log lengthscales."""

    log_signal_variance: float
    log_lengthscales: np.ndarray = field(repr=False)

    @classmethod
    def create(cls, signal_variance: float, lengthscales_sq) -> "SeArdKernel":
        """Build from raw (non-log) signal variance and squared lengthscales."""
        ll = np.log(np.asarray(lengthscales_sq, dtype=np.float64))
        return cls(float(np.log(signal_variance)), ll)

    @property
    def input_dim(self) -> int:
        return self.log_lengthscales.shape[0]

    @property
    def signal_variance(self) -> float:
        return float(np.exp(self.log_signal_variance))


@dataclass(frozen=True)
class TransitionMeanFn:
    """Identity-on-state mean: dimension d of the state block of x̂ = (x, u)."""

    state_dim: int


def mean_vector(mean_fn: TransitionMeanFn, points, d: int) -> np.ndarray:
    """Mean-function values for latent dimension ``d`` at a batch of points."""
    if not 0 <= d < mean_fn.state_dim:
        raise IndexOutOfRange(
            f"latent dimension {d} outside [0, {mean_fn.state_dim})")
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[None, :]
    return points[:, d].copy()


def _check_dim(kernel: SeArdKernel, *arrays):
    for a in arrays:
        if a.shape[-1] != kernel.input_dim:
            raise DimensionMismatch(
                f"expected points of dimension {kernel.input_dim}, "
                f"got {a.shape[-1]}")


def kernel_value(kernel: SeArdKernel, a, b) -> float:
    """Covariance between two points."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionMismatch(f"point dimensions differ: {a.shape} vs {b.shape}")
    _check_dim(kernel, a)
    k = ard_kernel_value(a[None, :], b[None, :],
                         kernel.log_signal_variance, kernel.log_lengthscales)
    return float(k[0, 0])


def kernel_matrix(kernel: SeArdKernel, a_points, b_points) -> np.ndarray:
    """Covariance matrix with entry (i, j) = k(A_i, B_j)."""
    a = np.atleast_2d(np.asarray(a_points, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b_points, dtype=np.float64))
    _check_dim(kernel, a, b)
    return ard_kernel_value(a, b, kernel.log_signal_variance,
                            kernel.log_lengthscales)


def kernel_cache(z, log_signal_var, log_lengthscales) -> tuple:
    """Query-independent quantities for repeated kernel rows against fixed z.

    Every rollout step queries the same inducing inputs and hyper-parameters,
    so σ_f², 1/l², the scaled transposed inducing matrix and its squared norms
    are hoisted out of the per-step kernel evaluation.
    """
    z = np.asarray(z, dtype=np.float64)
    ls = np.asarray(log_signal_var, dtype=np.float64)
    ll = np.asarray(log_lengthscales, dtype=np.float64)
    batched = z.ndim == 3
    z3 = z if batched else z[None]
    ll2 = ll if ll.ndim == 2 else ll[None]
    sf2 = np.exp(ls).reshape(z3.shape[0])
    inv_l2 = 1.0 / np.exp(ll2)
    zl_t = np.ascontiguousarray(np.swapaxes(z3 * inv_l2[:, None, :], 1, 2))
    z2 = ((z3 * z3) * inv_l2[:, None, :]).sum(-1)
    return batched, sf2, inv_l2, zl_t, z2


def ard_from_cache(x, cache: tuple) -> np.ndarray:
    """Kernel rows for queries x against the inducing set frozen in cache."""
    x = np.asarray(x, dtype=np.float64)
    batched, sf2, inv_l2, zl_t, z2 = cache
    x2 = (x * x) @ inv_l2.T  # (M, B)
    k = x @ zl_t  # (B, M, P), k is reused as the d² accumulator
    k *= -2.0
    k += x2.T[:, :, None]
    k += z2[:, None, :]
    k *= -0.5
    np.exp(k, out=k)
    k *= sf2[:, None, None]
    return k if batched else k[0]


def ard_kernel_value(x, z, log_signal_var, log_lengthscales,
                     cache: tuple | None = None) -> np.ndarray:
    """Eager SE-ARD kernel: K[m,p] = σ_f²·exp(−½ Σ_i (x_mi − z_pi)²/l²_i).

    ``x`` is (M, D).  ``z`` may be (P, D) with scalar log_signal_var and (D,)
    log_lengthscales, or batched (B, P, D) with (B,) and (B, D) logs, giving a
    (B, M, P) result with one hyper-parameter set per batch entry.  ``cache``
    carries the z-side precomputation from :func:`kernel_cache`.
    """
    if cache is None:
        cache = kernel_cache(z, log_signal_var, log_lengthscales)
    return ard_from_cache(x, cache)


def _ard_vjp(xv, zv, ls, ll, k, g):
    batched = zv.ndim == 3
    z3 = zv if batched else zv[None]
    ll2 = ll if ll.ndim == 2 else ll[None]
    inv_l2 = 1.0 / np.exp(ll2)
    k3 = k if batched else k[None]
    g3 = np.asarray(g) if batched else np.asarray(g)[None]
    w = g3 * k3
    rs = w.sum(-1)  # (B, M)
    cs = w.sum(-2)  # (B, P)
    zl = z3 * inv_l2[:, None, :]
    wx = np.swapaxes(w, 1, 2) @ xv  # (B, P, D)
    gx = (w @ zl).sum(0) - xv * (rs.T @ inv_l2)
    gz = (wx - z3 * cs[:, :, None]) * inv_l2[:, None, :]
    gsf = rs.sum(-1)
    t1 = rs @ (xv * xv)
    t2 = (wx * z3).sum(1)
    t3 = (cs[:, None, :] @ (z3 * z3))[:, 0, :]
    gll = (t1 - 2.0 * t2 + t3) * (0.5 * inv_l2)
    return (gx,
            gz if batched else gz[0],
            gsf.reshape(np.shape(ls)),
            gll.reshape(np.shape(ll)))


def ard_kernel(x, z, log_signal_var, log_lengthscales,
               cache: tuple | None = None) -> tp.Tensor:
    """Taped SE-ARD kernel with a fused hand-derived backward pass.

    Shapes follow :func:`ard_kernel_value`; gradients flow to all four inputs.
    A ``cache`` only accelerates the forward value; replay rebuilds it from
    the current input values so mutation of a leaf is still observable.
    """
    x = tp.as_tensor(x)
    z = tp.as_tensor(z)
    ls = tp.as_tensor(log_signal_var)
    ll = tp.as_tensor(log_lengthscales)
    v = ard_kernel_value(x.value, z.value, ls.value, ll.value, cache)

    def vjp(g):
        return _ard_vjp(x.value, z.value, ls.value, ll.value, v, g)

    def fwd():
        return ard_kernel_value(
            x.value, z.value, ls.value, ll.value,
            kernel_cache(z.value, ls.value, ll.value))

    return tp.primitive((x, z, ls, ll), v, vjp, fwd)
