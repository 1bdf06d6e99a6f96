from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swingopt.contract import ContractTerms, case1_terms, normalize
from swingopt.exceptions import ConfigError, GridError
from swingopt.models import OneFactorModel, ThreeFactorModel
from swingopt.oracle import (LatticeSpec, dp_value, effective_one_factor, fixed_leg, ou_dp_value, tiny_suite,
                             visited_states)


def two_date_lattice():
    return LatticeSpec((np.array([22.0]), np.array([25.0, 15.0])), np.ones(1), (np.array([[0.5, 0.5]]),), 1.0)


def test_two_date_example():
    terms = ContractTerms.uniform(2, 2 / 365, 0.0, 1.0, 1.0, 1.0, 20.0)
    res = dp_value(terms, two_date_lattice())
    assert res.value == pytest.approx(2.0, abs=1e-12)
    assert res.policy[0][0, 0] == 1


def test_deterministic_path_greedy():
    spots = [21.0, 18.0, 23.5, 19.0, 20.0]
    lat = LatticeSpec(tuple(np.array([s]) for s in spots), np.ones(1), tuple(np.ones((1, 1)) for _ in spots[1:]), 1.0)
    terms = ContractTerms.uniform(5, 5 / 365, 0.0, 2.0, 0.0, 10.0, 20.0)
    assert dp_value(terms, lat).value == pytest.approx(2.0 * sum(max(s - 20.0, 0) for s in spots))


def test_forced_contract_is_fixed_leg():
    lat = LatticeSpec.binomial(20.0, 1.1, 0.9, 4, volume_step=1.0)
    terms = ContractTerms.uniform(4, 4 / 365, 0.0, 2.0, 8.0, 8.0, 19.5)
    assert dp_value(terms, lat).value == pytest.approx(2.0 * fixed_leg(terms, lat), abs=1e-12)


def test_grid_misalignment_raises():
    terms = ContractTerms.uniform(2, 2 / 365, 0.0, 1.5, 1.0, 2.0, 20.0)
    with pytest.raises(GridError):
        dp_value(terms, two_date_lattice())
    with pytest.raises(GridError):
        dp_value(terms, LatticeSpec.binomial(20.0, 1.1, 0.9, 2))


def test_lattice_validation():
    with pytest.raises(ConfigError):
        LatticeSpec((np.array([20.0]), np.array([21.0, 19.0])), np.ones(1), (np.array([[0.6, 0.6]]),))
    with pytest.raises(ConfigError):
        LatticeSpec.binomial(20.0, 0.9, 0.8, 3)


@pytest.mark.parametrize("idx", range(5))
def test_tiny_suite_bang_bang_on_visited_states(idx):
    terms, lat = tiny_suite()[idx]
    res = dp_value(terms, lat)
    for k, mask in enumerate(visited_states(res, lat)):
        assert np.all(res.bang_bang[k][mask])


@pytest.mark.parametrize("idx", range(5))
def test_tiny_suite_monotone_in_global_bounds(idx):
    terms, lat = tiny_suite()[idx]
    base = dp_value(terms, lat).value
    assert dp_value(terms.replace(Q_max=terms.Q_max + 1), lat).value >= base - 1e-12
    if terms.Q_min >= 1:
        assert dp_value(terms.replace(Q_min=terms.Q_min - 1), lat).value >= base - 1e-12


@settings(max_examples=30)
@given(st.integers(2, 5), st.integers(1, 3), st.integers(0, 3), st.integers(0, 20), st.floats(18.0, 22.0))
def test_normalization_equivalence(n, width, q_min, extra, strike):
    q_max = q_min + width
    Q_min = n * q_min + min(extra, n * width)
    Q_max = min(Q_min + extra % 7, n * q_max)
    terms = ContractTerms.uniform(n, n / 365, float(q_min), float(q_max), float(Q_min), float(Q_max), strike)
    lat = LatticeSpec.binomial(20.0, 1.15, 0.85, n, volume_step=1.0)
    direct = dp_value(terms, lat).value
    norm, fixed, optional = normalize(terms)
    # the normalized contract lives on a grid of step 1 / width
    reduced = dp_value(norm, lat, volume_step=1.0 / width).value
    assert direct == pytest.approx(fixed * fixed_leg(terms, lat) + optional * reduced, abs=1e-10)


def _black_call(F, K, var):
    sd = math.sqrt(var)
    d1 = (math.log(F / K) + 0.5 * var) / sd
    cdf = lambda x: 0.5 * (1 + math.erf(x / math.sqrt(2)))  # noqa: E731
    return F * cdf(d1) - K * cdf(d1 - sd)


def test_quadrature_oracle_matches_strip_of_calls():
    # without a binding global constraint the optimum buys q_max whenever S > K
    terms = case1_terms().replace(Q_min=0.0, Q_max=186.0)
    model = OneFactorModel()
    strip = 6.0 * sum(_black_call(20.0, 20.0, v) for v in model.total_variance(terms.exercise_times))
    assert ou_dp_value(terms, model, nodes=1201) == pytest.approx(strip, rel=2e-4)


def test_effective_factor_reduction():
    lam, vol = effective_one_factor(ThreeFactorModel.uniform(0.3))
    assert lam == 1.5 and vol == pytest.approx(0.7 * math.sqrt(3 + 6 * 0.3))
    with pytest.raises(ConfigError):
        effective_one_factor(ThreeFactorModel((0.7, 0.7, 0.7), (1.0, 1.5, 2.0), np.eye(3)))


# values of the quadrature oracle at 1201 nodes, frozen; Richardson extrapolation from
# 1201 / 2401 nodes gives 65.32, 173.15, 148.13, 91.22
FROZEN = [("case1", 65.3309), (0.6, 173.1888), (0.3, 148.1554), (-0.2, 91.2364)]


@pytest.mark.parametrize("which,value", FROZEN, ids=[str(w) for w, _ in FROZEN])
def test_frozen_optimal_values(which, value):
    model = OneFactorModel() if which == "case1" else ThreeFactorModel.uniform(which)
    assert ou_dp_value(case1_terms(), model) == pytest.approx(value, abs=1e-3)
