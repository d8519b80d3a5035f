"""Tests for the initial-state recognition network."""

from __future__ import annotations

import numpy as np
import pytest

from prssm import recognition as rc
from prssm import tape as tp
from prssm.errors import WindowTooShort
from prssm.rng import SeededRng
from prssm.tape import Tape, finite_difference, grad


def _zero_params(window=4, d_y=1, d_u=1, d_x=2, hidden=8):
    n_in = window * (d_y + d_u)
    return rc.RecognitionParams(window=window,
                                w1=np.zeros((n_in, hidden)), b1=np.zeros(hidden),
                                w2=np.zeros((hidden, 2 * d_x)),
                                b2=np.zeros(2 * d_x))


def test_zero_weights_give_standard_normal():
    rec = _zero_params()
    out = rc.recognize(rec, np.ones((4, 1)), np.ones((4, 1)))
    np.testing.assert_array_equal(out.mean, np.zeros(2))
    np.testing.assert_array_equal(out.variance, np.ones(2))


def test_different_windows_give_different_means():
    rec = rc.init_recognition(1, 1, 2, SeededRng(3), window=4, hidden=8)
    rng = np.random.default_rng(4)
    a = rc.recognize(rec, rng.normal(size=(4, 1)), rng.normal(size=(4, 1)))
    b = rc.recognize(rec, rng.normal(size=(4, 1)), rng.normal(size=(4, 1)))
    assert not np.allclose(a.mean, b.mean)


def test_variance_strictly_positive():
    rec = rc.init_recognition(1, 1, 2, SeededRng(5), window=4, hidden=8)
    rng = np.random.default_rng(6)
    for _ in range(10):
        out = rc.recognize(rec, rng.normal(size=(4, 1)) * 5.0,
                           rng.normal(size=(4, 1)) * 5.0)
        assert np.all(out.variance > 0.0)


def test_window_too_short():
    rec = _zero_params(window=4)
    with pytest.raises(WindowTooShort):
        rc.recognize(rec, np.ones((3, 1)), np.ones((3, 1)))


def test_extra_steps_beyond_window_are_ignored():
    rec = rc.init_recognition(1, 1, 2, SeededRng(7), window=4, hidden=8)
    rng = np.random.default_rng(8)
    y, u = rng.normal(size=(9, 1)), rng.normal(size=(9, 1))
    a = rc.recognize(rec, y, u)
    b = rc.recognize(rec, y[:4], u[:4])
    np.testing.assert_array_equal(a.mean, b.mean)


def test_batched_windows_match_single_calls():
    rec = rc.init_recognition(2, 1, 3, SeededRng(9), window=3, hidden=8)
    rng = np.random.default_rng(10)
    y = rng.normal(size=(5, 3, 2))
    u = rng.normal(size=(5, 3, 1))
    mu, logvar = rc.recognize_windows(tp.as_tensor(rec.w1), tp.as_tensor(rec.b1),
                                      tp.as_tensor(rec.w2), tp.as_tensor(rec.b2),
                                      rec, y, u)
    for b in range(5):
        single = rc.recognize(rec, y[b], u[b])
        np.testing.assert_allclose(mu.value[b], single.mean, rtol=1e-12)
        np.testing.assert_allclose(np.exp(logvar.value[b]), single.variance,
                                   rtol=1e-12)


def test_gradient_of_mean_wrt_weights():
    rec = rc.init_recognition(1, 1, 2, SeededRng(11), window=3, hidden=6)
    rng = np.random.default_rng(12)
    y, u = rng.normal(size=(3, 1)), rng.normal(size=(3, 1))
    weights = rng.normal(size=(1, 2))
    names = ["w1", "b1", "w2", "b2"]

    def scalar(vals):
        t = Tape()
        leaves = [t.leaf(v) for v in vals]
        mu, _ = rc.recognize_windows(*leaves, rec, y, u)
        return leaves, tp.tensor_sum(tp.multiply(mu, weights))

    arrays = [getattr(rec, n) for n in names]
    leaves, out = scalar(arrays)
    gs = grad(out, leaves)
    for k, name in enumerate(names):
        def f(x, k=k):
            vals = [x if i == k else arrays[i] for i in range(4)]
            return float(scalar(vals)[1].value)
        fd = finite_difference(f, arrays[k])
        np.testing.assert_allclose(gs[k], fd, rtol=1e-4, atol=1e-7,
                                   err_msg=f"gradient wrt {name}")
