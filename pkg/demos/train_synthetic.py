"""
Learning a linear state-space system from input/output data
============================================================

The model never sees the latent state: training gets only the input and
the noisy scalar output of a lightly damped two-state rotation.  A short
stochastic-gradient run is enough to watch the ELBO climb and the free
simulation lock onto the test trajectory.  The Kalman filter built from
the true system gives the best achievable RMSE for reference; closing
the remaining factor is a matter of training longer (the acceptance
suite runs the full-length version).
"""

import numpy as np

from prssm.data import (compute_norm_stats, default_linear_spec,
                        generate_linear_ssm, kalman_free_simulation_rmse,
                        normalize)
from prssm.evaluation import rmse
from prssm.model import predict_free_simulation
from prssm.recognition import recognize
from prssm.rng import SeededRng
from prssm.training import TrainConfig, fit

WINDOW = 16  # recognition window, also the oracle's filter warm-up

spec = default_linear_spec()
train, test = generate_linear_ssm(spec, seed=0)
print(f"system: spectral radius "
      f"{np.abs(np.linalg.eigvals(spec.a)).max():.3f}, "
      f"{len(train)} train steps, {len(test)} test steps")

oracle = kalman_free_simulation_rmse(spec, test, WINDOW)
print(f"Kalman oracle free-simulation RMSE: {oracle:.4f}\n")

stats = compute_norm_stats(train)
train_n, test_n = normalize(train, stats), normalize(test, stats)

config = TrainConfig(mode="stochastic", iterations=4000, learning_rate=0.015,
                     n_samples=20, n_inducing=20, latent_dim=2,
                     batch_size=10, subtraj_len=60, recognition_window=WINDOW,
                     seed=0)


def progress(it, report):
    if it % 250 == 0 or it == config.iterations - 1:
        print(f"iter {it:5d}  elbo {report.elbo:10.1f}  "
              f"loglik {report.expected_loglik:10.1f}")


params, rows = fit(train_n, config, callback=progress)

# warm-start the initial state from the first WINDOW test steps, then run
# open loop on the inputs alone
q1 = recognize(params.recognition, test_n.y[:WINDOW], test_n.u[:WINDOW])
mean_n, var_n = predict_free_simulation(params, test_n.u, q1, 100,
                                        SeededRng(123))
y_mean = mean_n * stats.y_std + stats.y_mean
model_rmse = rmse(y_mean[WINDOW:], test.y[WINDOW:])

print(f"\nfree-simulation RMSE after {config.iterations} iterations: "
      f"{model_rmse:.4f}")
print(f"oracle ratio: {model_rmse / oracle:.2f}x "
      f"(1.00x would be information-theoretically perfect)")
print(f"learned observation noise std (normalized): "
      f"{float(np.exp(0.5 * params.log_obs_noise[0])):.4f}")
