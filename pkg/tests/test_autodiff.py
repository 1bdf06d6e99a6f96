from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swingopt import autodiff as ad
from swingopt.contract import ContractTerms, build_corridor
from swingopt.exceptions import NumericError, UsageError
from swingopt.models import OneFactorModel, PathBatch, ThreeFactorModel
from swingopt.strategies import NNParams, PVParams, forward, loss_and_grad

TERMS = ContractTerms.uniform(6, 6 / 365, 0.0, 2.0, 4.0, 9.0, 20.0, lag_steps=1)


def _loss(params, terms, batch):
    tape = ad.Tape()
    loss, _ = forward(tape, params, terms, build_corridor(terms), batch)
    return float(loss.value)


def _fd(params, terms, batch, rel=1e-5):
    flat = params.flat()
    out = np.empty_like(flat)
    for i in range(flat.size):
        h = rel * max(1.0, abs(flat[i]))
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (_loss(params.with_flat(up), terms, batch) - _loss(params.with_flat(dn), terms, batch)) / (2 * h)
    return out


def _kink_margin(params, terms, batch):
    tape = ad.Tape(track_kinks=True)
    forward(tape, params, terms, build_corridor(terms), batch)
    return tape.kink_margin


def _rel_err(g, fd):
    return np.max(np.abs(g - fd)) / max(1e-8, np.max(np.abs(fd)))


def _smooth_draw(make, terms, model, seed, paths=4, margin=1e-3):
    """Resample until no min/max/relu input sits within ``margin`` of its kink."""
    for k in range(200):
        params = make(seed * 1000 + k)
        batch = model.simulate(terms, paths, seed=(seed, k))
        if _kink_margin(params, terms, batch) > margin:
            return params, batch
    pytest.skip("no kink-free draw")


def test_constant_and_linear():
    tape = ad.Tape()
    theta = tape.param(np.array([0.3, -1.2, 2.0]))
    v = np.array([1.5, -2.0, 0.25])
    (g,) = tape.backward(ad.total(ad.mul(theta, v)), [theta])
    assert np.array_equal(g, v)
    tape2 = ad.Tape()
    theta2 = tape2.param(np.ones(3))
    c = ad.add(ad.mul(theta2, 0.0), 4.0)
    (g2,) = tape2.backward(ad.total(c), [theta2])
    assert np.all(g2 == 0)


def test_backward_before_forward():
    tape = ad.Tape()
    with pytest.raises(UsageError):
        tape.backward(None)
    other = ad.Tape()
    v = other.param(np.ones(())) * 2.0
    with pytest.raises(UsageError):
        tape.backward(v)


def test_tie_and_relu_conventions():
    tape = ad.Tape()
    a, b = tape.param(np.array([1.0])), tape.param(np.array([1.0]))
    ga, gb = tape.backward(ad.total(ad.maximum(a, b)), [a, b])
    assert ga[0] == 1.0 and gb[0] == 0.0
    tape = ad.Tape()
    x = tape.param(np.array([0.0, 2.0]))
    (gx,) = tape.backward(ad.total(ad.relu(x)), [x])
    assert np.array_equal(gx, [0.0, 1.0])


def test_zero_payoff_gives_zero_loss():
    spots = np.full((5, TERMS.n), TERMS.strike)
    batch = PathBatch(spots, np.zeros((5, TERMS.n, 1)))
    lg = loss_and_grad(PVParams.initial(TERMS.n), TERMS, build_corridor(TERMS), batch)
    assert lg.loss == 0.0
    assert np.all(lg.grad == 0)


def test_forced_single_date():
    terms = ContractTerms.uniform(1, 1 / 365, 0.0, 3.0, 3.0, 3.0, 20.0)
    batch = PathBatch(np.array([[23.5]]), np.zeros((1, 1, 1)))
    lg = loss_and_grad(PVParams.initial(1), terms, build_corridor(terms), batch)
    assert lg.loss == pytest.approx(-3.0 * 3.5)
    assert np.all(lg.grad == 0)


def test_pv_two_dates_single_path():
    terms = ContractTerms.uniform(2, 2 / 365, 0.0, 1.0, 0.5, 1.5, 20.0)
    batch = PathBatch(np.array([[21.0, 19.2]]), np.zeros((1, 2, 1)))
    params = PVParams(np.array([[0.7, -0.4, 0.2], [1.1, 0.3, -0.5]]))
    g = loss_and_grad(params, terms, build_corridor(terms), batch).grad
    assert _rel_err(g, _fd(params, terms, batch)) <= 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_nn_gradient_matches_finite_differences(seed):
    model = OneFactorModel()

    def make(s):
        p = NNParams.initial(seed=s)
        gen = np.random.default_rng(s)
        return p.with_flat(p.flat() + 0.3 * gen.standard_normal(p.n_params))

    params, batch = _smooth_draw(make, TERMS, model, seed)
    assert params.n_params == 183
    g = loss_and_grad(params, TERMS, build_corridor(TERMS), batch).grad
    assert _rel_err(g, _fd(params, TERMS, batch)) <= 1e-5


@settings(max_examples=15)
@given(st.integers(0, 10**6), st.sampled_from(["pv", "nn-state"]))
def test_gradient_property(seed, kind):
    model = ThreeFactorModel.uniform(0.3)

    def make(s):
        gen = np.random.default_rng(s)
        if kind == "pv":
            return PVParams(np.array([1.0, -1.0, 0.0]) + gen.normal(0, 0.5, (TERMS.n, 3)))
        p = NNParams.initial(hidden=(4,), input_spec="state", state_dim=3, seed=s)
        return p.with_flat(p.flat() + 0.2 * gen.standard_normal(p.n_params))

    params, batch = _smooth_draw(make, TERMS, model, seed)
    g = loss_and_grad(params, TERMS, build_corridor(TERMS), batch).grad
    assert _rel_err(g, _fd(params, TERMS, batch)) <= 1e-5


def test_linearity_exact():
    tape = ad.Tape()
    x = tape.param(np.array([0.5, -0.2, 1.3]))
    l1 = ad.total(ad.exp(x))
    l2 = ad.total(ad.mul(ad.logistic(x), x))
    alpha = 2.5
    g1 = ad.Tape()
    x1 = g1.param(x.value)
    (d1,) = g1.backward(ad.total(ad.exp(x1)), [x1])
    g2 = ad.Tape()
    x2 = g2.param(x.value)
    (d2,) = g2.backward(ad.total(ad.mul(ad.logistic(x2), x2)), [x2])
    (d,) = tape.backward(ad.add(ad.mul(l1, alpha), l2), [x])
    assert np.array_equal(d, alpha * d1 + d2)


def test_tape_reuse_gives_identical_gradients():
    batch = OneFactorModel().simulate(TERMS, 64, seed=3)
    params = NNParams.initial(seed=1)
    tape = ad.Tape()
    corridor = build_corridor(TERMS)
    a = loss_and_grad(params, TERMS, corridor, batch, tape).grad
    b = loss_and_grad(params, TERMS, corridor, batch, tape).grad
    assert np.array_equal(a, b)


def test_non_finite_reports_node():
    tape = ad.Tape()
    x = tape.param(np.array([1.0, 0.0]))
    with np.errstate(divide="ignore"):
        y = ad.log(x)
    z = ad.total(ad.mul(y, 2.0))
    with pytest.raises(NumericError) as info:
        tape.check_finite(z)
    assert info.value.node == y.index
