"""Swing contract valuation by parametric exercise rules trained with stochastic gradients."""

from .contract import ContractTerms, build_corridor, case1_terms, case2_terms
from .estimator import SwingPricer
from .exceptions import (ConfigError, GridError, InfeasibleContractError, NumericError, StateError, SwingError,
                         UsageError)
from .models import MultiCurveModel, OneFactorModel, ThreeFactorModel, multicurve_2022
from .strategies import NNParams, PVParams, load_params, save_params
from .training import TrainConfig, train
from .valuation import PriceEstimate, delta_forward, price

__version__ = "0.1.0"
