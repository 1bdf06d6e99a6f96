from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swingopt.contract import ContractTerms, admissible_interval, build_corridor, case1_terms, case2_terms
from swingopt.exceptions import ConfigError
from swingopt.models import OneFactorModel, PathBatch, ThreeFactorModel
from swingopt.strategies import (DecisionContext, NNParams, PVParams, chi_nn, chi_pv, eta, load_params,
                                 purchase, roll_strategy, save_params)

CASE1 = case1_terms()
CORR1 = build_corridor(CASE1)


def test_eta_examples():
    t = case2_terms()
    assert eta(t, 1300.0) == 0.0
    assert eta(t, 1900.0) == 1.0
    assert eta(t, 1450.0) == pytest.approx(0.25)
    flat = t.replace(Q_min=1500.0, Q_max=1500.0)
    assert eta(flat, 1800.0) == pytest.approx(0.2)
    with pytest.raises(ConfigError):
        eta(t.replace(Q_min=0.0, Q_max=0.0), 1.0)


def test_chi_pv_examples():
    theta = np.zeros((CASE1.n, 3))
    theta[4] = (2.0, -3.0, 0.5)
    theta[5] = (1.0, 0.0, 0.0)
    p = PVParams(theta)
    Q04 = CASE1.Q_min + 0.4 * (CASE1.Q_max - CASE1.Q_min)
    assert chi_pv(p, DecisionContext(4, 21.0, Q04), CASE1) == pytest.approx(1.3)
    assert chi_pv(p, DecisionContext(5, 22.0, 0.0), CASE1) == pytest.approx(2.0)
    assert chi_pv(p, DecisionContext(0, 25.0, 10.0), CASE1) == 0.0


def test_chi_nn_examples():
    zero = NNParams.initial(seed=0)
    zero = zero.with_flat(np.zeros(zero.n_params))
    assert zero.n_params == 183
    assert chi_nn(zero, DecisionContext(3, 25.0, 12.0), CASE1) == 0.0
    with pytest.raises(ConfigError):
        chi_nn(NNParams.initial(input_spec="state", state_dim=3), DecisionContext(0, 20.0, 0.0), CASE1)


def _constant_network(a, b, c):
    """Network whose output is the constant (a, b, c) whatever the input."""
    p = NNParams.initial(hidden=(4,), seed=0)
    ws = [np.zeros_like(w) for w in p.weights]
    bs = [np.zeros_like(x) for x in p.biases]
    bs[-1] = np.array([a, b, c])
    return NNParams(ws, bs)


def test_nn_nests_constant_pv():
    a, b, c = 0.8, -2.0, 0.3
    nn = _constant_network(a, b, c)
    pv = PVParams.initial(CASE1.n, (a, b, c))
    batch = OneFactorModel().simulate(CASE1, 2000, seed=4)
    for mode in ("smooth", "bang_bang"):
        r_nn = roll_strategy(CASE1, CORR1, nn, batch, mode)
        r_pv = roll_strategy(CASE1, CORR1, pv, batch, mode)
        assert np.array_equal(r_nn.volumes, r_pv.volumes)


def test_purchase_limits_and_midpoint():
    k, Q = 10, 40.0
    lo, hi = admissible_interval(CASE1, CORR1, k, Q)
    big = PVParams.initial(CASE1.n, (0.0, 0.0, 800.0))
    small = PVParams.initial(CASE1.n, (0.0, 0.0, -800.0))
    zero = PVParams.initial(CASE1.n, (0.0, 0.0, 0.0))
    ctx = DecisionContext(k, 20.0, Q)
    assert purchase(CASE1, CORR1, big, ctx)[0] == pytest.approx(hi)
    assert purchase(CASE1, CORR1, small, ctx)[0] == pytest.approx(lo)
    assert purchase(CASE1, CORR1, zero, ctx, "smooth")[0] == pytest.approx(0.5 * (lo + hi))
    assert purchase(CASE1, CORR1, zero, ctx, "bang_bang")[0] == hi
    q, Q_next = purchase(CASE1, CORR1, zero, ctx, "bang_bang")
    assert Q_next == Q + q


def test_forced_purchase_both_modes():
    # at the last date from Q = 134 only q = 6 reaches Q_min = 140
    k = CASE1.n - 1
    for mode in ("smooth", "bang_bang"):
        q, Q_next = purchase(CASE1, CORR1, PVParams.initial(CASE1.n, (0.0, 0.0, -50.0)),
                             DecisionContext(k, 10.0, 134.0), mode)
        assert q == 6.0 and Q_next == 140.0
    forced = ContractTerms.uniform(5, 5 / 365, 0.0, 2.0, 10.0, 10.0, 20.0)
    fc = build_corridor(forced)
    for mode in ("smooth", "bang_bang"):
        q, _ = purchase(forced, fc, PVParams.initial(5, (0.0, 0.0, -50.0)), DecisionContext(2, 1.0, 4.0), mode)
        assert q == 2.0


def test_fully_forced_contract_reward():
    terms = ContractTerms.uniform(8, 8 / 365, 0.0, 3.0, 24.0, 30.0, 20.0)
    batch = OneFactorModel().simulate(terms, 500, seed=2)
    r = roll_strategy(terms, None, PVParams.initial(8, (-1.0, 0.0, -5.0)), batch, "smooth")
    assert np.allclose(r.volumes, 3.0)
    assert np.allclose(r.rewards, 3.0 * (batch.spots - 20.0).sum(axis=1))


@settings(max_examples=25)
@given(st.integers(0, 2**31), st.sampled_from(["smooth", "bang_bang"]), st.sampled_from(["pv", "nn"]))
def test_feasibility_property(seed, mode, kind):
    gen = np.random.default_rng(seed)
    if kind == "pv":
        params = PVParams(gen.normal(0, 3, (CASE1.n, 3)))
    else:
        p = NNParams.initial(seed=seed % 1000)
        params = p.with_flat(gen.normal(0, 2, p.n_params))
    batch = OneFactorModel().simulate(CASE1, 2000, seed=seed)
    r = roll_strategy(CASE1, CORR1, params, batch, mode)
    Q = np.concatenate([np.zeros((batch.n_paths, 1)), np.cumsum(r.volumes, axis=1)], axis=1)
    tol = 1e-9
    assert np.all(r.volumes >= -tol) and np.all(r.volumes <= 6.0 + tol)
    assert np.all(Q >= CORR1.q_down - tol) and np.all(Q <= CORR1.q_up + tol)
    assert np.all((r.final_volume >= 140 - tol) & (r.final_volume <= 200 + tol))


def test_bang_bang_hits_endpoints():
    gen = np.random.default_rng(0)
    params = PVParams(gen.normal(0, 1, (CASE1.n, 3)))
    batch = OneFactorModel().simulate(CASE1, 3000, seed=8)
    r = roll_strategy(CASE1, CORR1, params, batch, "bang_bang")
    Q = np.concatenate([np.zeros((batch.n_paths, 1)), np.cumsum(r.volumes, axis=1)], axis=1)
    for k in range(CASE1.n):
        lo, hi = admissible_interval(CASE1, CORR1, k, Q[:, k])
        assert np.all(np.isclose(r.volumes[:, k], lo, atol=1e-12) | np.isclose(r.volumes[:, k], hi, atol=1e-12))


def test_adaptedness():
    params = NNParams.initial(input_spec="state", state_dim=3, seed=2)
    model = ThreeFactorModel.uniform(0.3)
    batch = model.simulate(CASE1, 400, seed=1)
    base = roll_strategy(CASE1, CORR1, params, batch, "smooth").volumes
    for k in (0, 7, 29):
        spots, states = batch.spots.copy(), batch.states.copy()
        spots[:, k + 1:] *= 1.7
        states[:, k + 1:] += 0.9
        moved = roll_strategy(CASE1, CORR1, params, PathBatch(spots, states), "smooth").volumes
        assert np.array_equal(moved[:, : k + 1], base[:, : k + 1])


@given(st.floats(0.05, 5.0), st.floats(0.0, 150.0))
def test_monotone_response(theta1, Q):
    k = 12
    corr = CORR1
    Q = float(np.clip(Q, corr.q_down[k], corr.q_up[k]))
    params = PVParams.initial(CASE1.n, (theta1, 0.0, 0.0))
    S = np.linspace(10.0, 30.0, 41)
    for mode in ("smooth", "bang_bang"):
        q, _ = purchase(CASE1, corr, params, DecisionContext(k, S, np.full_like(S, Q)), mode)
        assert np.all(np.diff(q) >= -1e-12)


def test_save_load_roundtrip(tmp_path):
    for params in (PVParams(np.random.default_rng(1).normal(size=(CASE1.n, 3))),
                   NNParams.initial(hidden=(5, 7), input_spec="state", state_dim=3, seed=3)):
        doc = save_params(params, tmp_path / "p.json", CASE1.n)
        assert doc["contract_n"] == CASE1.n and doc["strategy_kind"] == params.kind
        back = load_params(tmp_path / "p.json")
        assert np.array_equal(back.flat(), params.flat())
        assert type(back) is type(params)


def test_shape_mismatches():
    with pytest.raises(ConfigError):
        PVParams(np.zeros((3, 2)))
    with pytest.raises(ConfigError):
        PVParams.initial(5).check(CASE1)
    with pytest.raises(ConfigError):
        NNParams([np.zeros((4, 3)), np.zeros((3, 5))], [np.zeros(4), np.zeros(3)])
    batch = OneFactorModel().simulate(case2_terms(), 10, seed=0)
    with pytest.raises(ConfigError):
        roll_strategy(CASE1, CORR1, PVParams.initial(CASE1.n), batch)
