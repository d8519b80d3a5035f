"""
Sparse variational GP regression versus the exact dense bound
==============================================================

A sparse GP with P inducing points can only lower-bound the dense GP's
log marginal likelihood.  This script fits the variational distribution
over inducing outputs on a small 1-D regression problem three ways:
gradient ascent with Adam, the closed-form optimum of the same diagonal
family, and the closed form again with the inducing set placed on the
data.  The bound climbs toward, but never past, the exact value.
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve

import prssm.tape as tp
from prssm.kernels import ard_kernel, ard_kernel_value
from prssm.rng import SeededRng
from prssm.training import AdamState, adam_step

# a smooth function observed through noise at 30 scattered points
rng = SeededRng(42)
x = np.sort(rng.uniform(30, -3.0, 3.0)).reshape(30, 1)
f = np.sin(1.4 * x[:, 0]) + 0.4 * x[:, 0]
y = f + 0.1 * rng.standard_normal(30)

log_sf2 = np.log(1.0)         # signal variance
log_l2 = np.log(np.array([0.8]))  # squared lengthscale
noise = 0.1 ** 2

# exact dense log marginal: y ~ N(0, K + noise*I)
k_dense = ard_kernel_value(x, x, log_sf2, log_l2)
cov = k_dense + noise * np.eye(30)
chol = cho_factor(cov, lower=True)
alpha = cho_solve(chol, y)
dense_lml = -0.5 * (y @ alpha + 30 * np.log(2.0 * np.pi)) \
    - np.log(np.diag(chol[0])).sum()
print(f"dense log marginal likelihood: {dense_lml:.4f}")

# sparse side: 12 inducing points on a grid, variational q(z) to be learned
p = 12
z = np.linspace(-3.0, 3.0, p).reshape(p, 1)
q_mu = np.zeros(p)
q_log_sigma = np.full(p, np.log(0.5))

kzz_const = ard_kernel_value(z, z, log_sf2, log_l2)
eye_p = np.eye(p)


def bound(mu_t, logsig_t):
    """Exact-likelihood sparse ELBO for fixed kernel and noise."""
    kzz = tp.as_tensor(kzz_const)
    l = tp.cholesky(kzz)
    y1 = tp.solve_triangular(l, mu_t, lower=True)
    w = tp.solve_triangular(l, y1, lower=True, trans=True)
    linv = tp.solve_triangular(l, eye_p, lower=True)
    kinv = tp.matmul(tp.transpose(linv), linv)
    sigma = tp.exp(logsig_t)
    b = kinv - tp.matmul(tp.multiply(kinv, sigma), kinv)

    kstar = ard_kernel(tp.as_tensor(x), tp.as_tensor(z),
                       tp.as_tensor(log_sf2), tp.as_tensor(log_l2))
    mean = tp.matmul(kstar, w)
    quad = tp.tensor_sum(tp.multiply(tp.matmul(kstar, b), kstar), axis=-1)
    var = np.exp(log_sf2) - quad

    res = tp.as_tensor(y) - mean
    ll = -0.5 * (30 * np.log(2.0 * np.pi * noise)
                 + tp.tensor_sum(tp.multiply(res, res) + var) * (1.0 / noise))
    trace = tp.tensor_sum(tp.multiply(tp.diag_part(kinv), sigma))
    logdet_k = 2.0 * tp.tensor_sum(tp.log(tp.diag_part(l)))
    kl = 0.5 * (trace + tp.tensor_sum(tp.multiply(y1, y1)) - float(p)
                + logdet_k - tp.tensor_sum(logsig_t))
    return ll - kl


flat = np.concatenate([q_mu, q_log_sigma])
adam = AdamState.initial(flat.size)
start = None
for it in range(800):
    tape = tp.Tape()
    mu_t = tape.leaf(flat[:p])
    logsig_t = tape.leaf(flat[p:])
    elbo = bound(mu_t, logsig_t)
    if start is None:
        start = elbo.item()
    g_mu, g_ls = tp.grad(elbo, [mu_t, logsig_t])
    flat, adam = adam_step(adam, flat, -np.concatenate([g_mu, g_ls]), 0.05)
    if it % 100 == 0 or it == 799:
        gap = dense_lml - elbo.item()
        print(f"iter {it:4d}  sparse bound {elbo.item():9.4f}  "
              f"gap to dense {gap:8.4f}")

final = elbo.item()
print(f"\nbound holds: {final:.4f} <= {dense_lml:.4f} "
      f"({final <= dense_lml})")

# Adam crawls here because K_zz is ill-conditioned, but for fixed kernel
# and noise the optimal diagonal q is available in closed form: the bound
# is quadratic in the mean and separable in the variances.


def optimal_diag_q(z_pts):
    p_loc = z_pts.shape[0]
    kzz = ard_kernel_value(z_pts, z_pts, log_sf2, log_l2) \
        + 1e-10 * np.eye(p_loc)
    kxz = ard_kernel_value(x, z_pts, log_sf2, log_l2)
    kinv = cho_solve(cho_factor(kzz, lower=True), np.eye(p_loc))
    a = kxz @ kinv
    mu = np.linalg.solve(a.T @ a / noise + kinv, a.T @ y / noise)
    sigma2 = 1.0 / (np.square(a).sum(axis=0) / noise + np.diag(kinv))
    return mu, sigma2


def bound_at(z_pts, mu, sigma2):
    """Value-only call of the same bound graph on constant tensors."""
    global kzz_const, z, p, eye_p
    kzz_const = ard_kernel_value(z_pts, z_pts, log_sf2, log_l2)
    z, p, eye_p = z_pts, z_pts.shape[0], np.eye(z_pts.shape[0])
    return bound(tp.as_tensor(mu), tp.as_tensor(np.log(sigma2))).item()


mu_star, sigma2_star = optimal_diag_q(z)
at_opt = bound_at(z, mu_star, sigma2_star)
print(f"closed-form optimum of the same family: {at_opt:.4f}")
print(f"  after 800 iterations Adam is still {at_opt - final:.2f} nats "
      f"short of its own family's optimum; the remaining "
      f"{dense_lml - at_opt:.2f} nats to the dense value are the price "
      f"of a diagonal q(z) squeezed through {p} inducing points")

# that price is geometry: clustered inputs couple the inducing outputs,
# and a diagonal q cannot represent the coupling.  On an evenly spaced
# design with the inducing set on the data and a local kernel, the
# diagonal family is essentially exact.
x = np.linspace(-3.0, 3.0, 30).reshape(30, 1)
y = np.sin(1.4 * x[:, 0]) + 0.4 * x[:, 0] + 0.1 * rng.standard_normal(30)
log_l2 = np.log(np.array([0.03]))
k_dense = ard_kernel_value(x, x, log_sf2, log_l2)
chol = cho_factor(k_dense + noise * np.eye(30), lower=True)
alpha = cho_solve(chol, y)
dense_local = float(-0.5 * (y @ alpha + 30 * np.log(2.0 * np.pi))
                    - np.log(np.diag(chol[0])).sum())
mu_star, sigma2_star = optimal_diag_q(x)
at_opt = bound_at(x, mu_star, sigma2_star)
print(f"\nevenly spaced design, z = x, squared lengthscale 0.03:")
print(f"  dense {dense_local:.4f}  sparse optimum {at_opt:.4f}  "
      f"gap {(dense_local - at_opt) / abs(dense_local):.3%}")
