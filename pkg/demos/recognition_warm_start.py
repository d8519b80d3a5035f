"""
What the recognition network buys at prediction time
====================================================

Free simulation has to start somewhere.  Without side information the
initial latent state is the standard-normal prior, and the first steps
of the rollout are essentially guesses; the recognition network instead
reads the first L observations and inputs and proposes a concentrated
q(x1).  This script trains one model and compares the early-step error
of both warm starts on fresh test data, seed by seed.
"""

import numpy as np

from prssm.data import (compute_norm_stats, default_linear_spec,
                        generate_linear_ssm, normalize)
from prssm.model import predict_free_simulation
from prssm.recognition import DiagonalGaussian, recognize
from prssm.rng import SeededRng
from prssm.training import TrainConfig, fit

L = 16

spec = default_linear_spec()
config = TrainConfig(mode="stochastic", iterations=1200, learning_rate=0.015,
                     n_samples=20, n_inducing=20, latent_dim=2,
                     batch_size=10, subtraj_len=60, recognition_window=L,
                     seed=0)

print(f"{'seed':>4}  {'recognition MAE':>16}  {'prior MAE':>10}  better")
wins = 0
for seed in range(3):
    train, test = generate_linear_ssm(spec, seed)
    stats = compute_norm_stats(train)
    train_n, test_n = normalize(train, stats), normalize(test, stats)
    cfg = TrainConfig(**{**config.__dict__, "seed": seed})
    params, _ = fit(train_n, cfg)

    q1_rec = recognize(params.recognition, test_n.y[:L], test_n.u[:L])
    d_x = params.state_dim
    q1_prior = DiagonalGaussian(mean=np.zeros(d_x), variance=np.ones(d_x))

    # same sampling seed for both, so the comparison is paired
    mean_rec, _ = predict_free_simulation(params, test_n.u, q1_rec, 100,
                                          SeededRng(seed + 1000))
    mean_prior, _ = predict_free_simulation(params, test_n.u, q1_prior, 100,
                                            SeededRng(seed + 1000))
    mae_rec = float(np.abs(mean_rec[:L] - test_n.y[:L]).mean())
    mae_prior = float(np.abs(mean_prior[:L] - test_n.y[:L]).mean())
    wins += mae_rec < mae_prior
    print(f"{seed:4d}  {mae_rec:16.4f}  {mae_prior:10.4f}  "
          f"{'yes' if mae_rec < mae_prior else 'no'}")

print(f"\nrecognition warm start wins on {wins}/3 seeds over "
      f"the first {L} test steps")
