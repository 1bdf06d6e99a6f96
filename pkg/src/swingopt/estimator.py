"""scikit-learn style front end: ``SwingPricer(...).fit(terms, model).price()``."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .contract import ContractTerms, build_corridor
from .exceptions import ConfigError
from .models import PathBatch
from .strategies import MODES, roll_strategy
from .training import TrainConfig, train
from .valuation import delta_forward, price


class SwingPricer(BaseEstimator):
    """Learns a parametric exercise rule for one contract under one price model.

    Constructor arguments are the training hyperparameters; ``fit`` takes the
    contract and the model in place of ``X``. Fitted attributes end with ``_``.
    """

    def __init__(self, strategy="pv", hidden=(10, 10), input_spec="basic", optimizer="psgld",
                 optimizer_params=None, iterations=1000, batch_size=2**14, batches_per_iter=1, seed=0,
                 eval_paths=10**6, eval_seed=1, threads=1):
        self.strategy = strategy
        self.hidden = hidden
        self.input_spec = input_spec
        self.optimizer = optimizer
        self.optimizer_params = optimizer_params
        self.iterations = iterations
        self.batch_size = batch_size
        self.batches_per_iter = batches_per_iter
        self.seed = seed
        self.eval_paths = eval_paths
        self.eval_seed = eval_seed
        self.threads = threads

    def train_config(self) -> TrainConfig:
        return TrainConfig(iterations=self.iterations, batch_size=self.batch_size,
                           batches_per_iter=self.batches_per_iter, optimizer=self.optimizer,
                           optimizer_params=dict(self.optimizer_params or {"lr": 0.1}), seed=self.seed,
                           strategy=self.strategy, hidden=tuple(self.hidden), input_spec=self.input_spec)

    def fit(self, terms: ContractTerms, model, init=None):
        if not isinstance(terms, ContractTerms):
            raise ConfigError("fit expects ContractTerms as its first argument")
        self.params_, self.report_ = train(terms, model, self.train_config(), init=init)
        self.terms_, self.model_ = terms, model
        self.corridor_ = build_corridor(terms)
        self.loss_trace_ = self.report_.trace
        return self

    def predict(self, batch: PathBatch, mode: str = "bang_bang") -> np.ndarray:
        """Per-date purchased volumes, shape ``(n_paths, n_dates)``."""
        check_is_fitted(self, "params_")
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        return roll_strategy(self.terms_, self.corridor_, self.params_, batch, mode).volumes

    def score(self, batch: PathBatch, mode: str = "bang_bang") -> float:
        """Mean realised reward on ``batch`` (higher is better)."""
        check_is_fitted(self, "params_")
        return float(roll_strategy(self.terms_, self.corridor_, self.params_, batch, mode,
                                   keep_volumes=False).rewards.mean())

    def price(self, mode: str = "bang_bang", n_paths: int | None = None, seed=None):
        check_is_fitted(self, "params_")
        return price(self.terms_, self.model_, self.params_, n_paths or self.eval_paths, mode,
                     seed=self.eval_seed if seed is None else seed, threads=self.threads)

    def delta(self, mode: str = "bang_bang", n_paths: int | None = None, seed=None):
        check_is_fitted(self, "params_")
        return delta_forward(self.terms_, self.model_, self.params_, n_paths or self.eval_paths, mode,
                             seed=self.eval_seed if seed is None else seed, threads=self.threads)
