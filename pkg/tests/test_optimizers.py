from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swingopt.exceptions import ConfigError, NumericError
from swingopt.optimizers import AdamState, PSGLDState, SGDState, adam_step, make_optimizer, psgld_step, sgd_step


def test_sgd_examples():
    assert sgd_step(np.array([1.0]), np.array([2.0]), 0.1)[0] == pytest.approx(0.8)
    x = np.array([0.3, -2.0])
    assert np.array_equal(sgd_step(x, np.zeros(2), 0.1), x)


def test_sgd_half_batches_average():
    gen = np.random.default_rng(0)
    per_path = gen.normal(size=(8, 5))
    theta = gen.normal(size=5)
    full = sgd_step(theta, per_path.mean(axis=0), 0.1)
    halves = sgd_step(theta, 0.5 * (per_path[:4].mean(axis=0) + per_path[4:].mean(axis=0)), 0.1)
    assert np.allclose(full, halves, rtol=0, atol=1e-15)


def test_adam_first_step():
    st_ = AdamState(lr=0.1, beta1=0.9, beta2=0.999, eps=1e-10)
    out = adam_step(st_, np.zeros(1), np.ones(1))
    assert out[0] == pytest.approx(-0.1, rel=1e-8)
    assert st_.step_count == 1


def test_adam_zero_gradient_never_moves():
    st_ = AdamState()
    x = np.array([1.0, -3.0])
    for _ in range(50):
        x2 = st_.step(x, np.zeros(2))
        assert np.array_equal(x2, x)


@given(st.floats(1e-3, 1e3), st.sampled_from([-1.0, 1.0]))
def test_adam_constant_gradient_step_is_lr(c, sign):
    st_ = AdamState(lr=0.1)
    x = np.zeros(1)
    steps = []
    for _ in range(200):
        x_new = st_.step(x, np.array([sign * c]))
        steps.append(x_new[0] - x[0])
        x = x_new
    # bias-corrected moments equal c and c^2 exactly under a constant gradient
    assert np.allclose(np.abs(steps), 0.1, rtol=1e-6)


def test_adam_scale_invariant_constant_regime():
    a, b = AdamState(), AdamState()
    xa = xb = np.zeros(3)
    g = np.array([0.5, -2.0, 7.0])
    for _ in range(30):
        xa, xb = a.step(xa, g), b.step(xb, 1000.0 * g)
    assert np.allclose(xa, xb, rtol=1e-9)


def test_adam_strict_index_variant_differs():
    strict = AdamState(strict_index=True)
    x = strict.step(np.zeros(1), np.ones(1))
    # the printed recursion corrects zero previous moments, so the first step is 0
    assert x[0] == 0.0
    x = strict.step(x, np.ones(1))
    # second step uses M_1 = 0.1 and MS_1 = 0.001 corrected by the step-2 factors
    expected = -0.1 * (0.1 / (1 - 0.9**2)) / np.sqrt(0.001 / (1 - 0.999**2))
    assert x[0] == pytest.approx(expected, rel=1e-8)


def test_psgld_zero_noise_equals_rmsprop_adam_variant():
    gen = np.random.default_rng(3)
    grads = gen.normal(size=(40, 6))
    p = PSGLDState(lr=0.05, beta=0.8, noise=0.0)
    a = AdamState(lr=0.05, beta1=0.0, beta2=0.8, bias_correction=False)
    xp = xa = gen.normal(size=6)
    for g in grads:
        xp, xa = psgld_step(p, xp, g), adam_step(a, xa, g)
    assert np.allclose(xp, xa, rtol=1e-13, atol=0)


def test_psgld_reproducible_and_noisy():
    grads = np.random.default_rng(5).normal(size=(20, 4))

    def run(seed, noise=1e-2):
        s = make_optimizer("psgld", seed=seed, noise=noise)
        x = np.zeros(4)
        for g in grads:
            x = s.step(x, g)
        return x

    assert np.array_equal(run(7), run(7))
    assert not np.array_equal(run(7), run(8))
    assert not np.array_equal(run(7), run(7, noise=0.0))


def test_psgld_defaults():
    s = make_optimizer("psgld")
    assert (s.lr, s.beta, s.noise, s.eps) == (0.1, 0.8, 1e-6, 1e-10)


def test_psgld_noise_scale():
    # one step from MS = 0 with unit gradient: P = 1/(eps + sqrt(1 - beta)), noise std noise*sqrt(lr)*P
    s = PSGLDState(lr=0.1, noise=1e-3, eps=1e-4)
    x = s.step(np.zeros(20000), np.ones(20000))
    p = 1.0 / (1e-4 + np.sqrt(0.2))
    assert np.mean(x) == pytest.approx(-0.1 * p, rel=1e-4)
    assert np.std(x) == pytest.approx(1e-3 * np.sqrt(0.1) * p, rel=0.03)


def test_psgld_no_noise_without_gradient():
    s = PSGLDState(lr=0.1, noise=1.0)
    assert np.array_equal(s.step(np.ones(100), np.zeros(100)), np.ones(100))


def test_psgld_noise_bounded_after_moment_decay():
    # a unit that stops receiving gradient lets MS decay towards 0; the
    # preconditioned noise must stay within the largest gradient-step size
    s = PSGLDState(lr=0.1, noise=1e-6)
    x = np.zeros(1000)
    x = s.step(x, np.ones(1000))
    for _ in range(150):
        x = s.step(x, np.zeros(1000))
    before = x.copy()
    x = s.step(x, np.full(1000, 1e-30))
    assert np.max(np.abs(x - before)) <= 2 * 0.1 / np.sqrt(0.2) + 1e-12


def test_rejects_bad_gradients():
    for opt in (SGDState(), AdamState(), PSGLDState()):
        with pytest.raises(NumericError):
            opt.step(np.zeros(2), np.array([np.nan, 1.0]))
        with pytest.raises(ConfigError):
            opt.step(np.zeros(2), np.zeros(3))
    with pytest.raises(ConfigError):
        make_optimizer("rmsprop")
    with pytest.raises(ConfigError):
        make_optimizer("adam", momentum=0.5)


@given(st.integers(0, 1000))
def test_shape_and_finiteness(seed):
    gen = np.random.default_rng(seed)
    for opt in (make_optimizer("sgd"), make_optimizer("adam"), make_optimizer("psgld", seed=seed)):
        x = gen.normal(size=(7,))
        for _ in range(5):
            x = opt.step(x, gen.normal(size=7) * 10 ** gen.uniform(-6, 6))
            assert x.shape == (7,) and np.all(np.isfinite(x))
