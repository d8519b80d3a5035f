"""Shared builders for small test instances."""

from __future__ import annotations

import numpy as np
import pytest

from prssm.model import PrssmParams
from prssm.recognition import init_recognition
from prssm.rng import SeededRng


def make_tiny_params(seed=0, d_x=2, d_u=1, d_y=1, p=3, recognition=False,
                     window=4, hidden=8):
    """A small random but well-conditioned PR-SSM parameter set."""
    rng = np.random.default_rng(seed)
    rec = None
    if recognition:
        rec = init_recognition(d_y, d_u, d_x, SeededRng(seed + 1),
                               window=window, hidden=hidden)
    return PrssmParams(
        z=rng.uniform(-1.5, 1.5, (d_x, p, d_x + d_u)),
        q_mu=rng.normal(0.0, 0.3, (d_x, p)),
        q_log_sigma=rng.uniform(-4.0, -2.0, (d_x, p)),
        log_sf2=rng.uniform(-1.0, 0.0, d_x),
        log_l2=rng.uniform(-0.3, 0.7, (d_x, d_x + d_u)),
        log_process_noise=np.full(d_x, np.log(0.02)),
        log_obs_noise=np.full(d_y, np.log(0.1)),
        init_state_mean=rng.normal(0.0, 0.3, d_x),
        init_state_log_var=rng.uniform(-1.5, -0.5, d_x),
        recognition=rec,
    )


@pytest.fixture
def tiny_params():
    return make_tiny_params()
