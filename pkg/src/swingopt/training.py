"""Optimization loop and transfer learning between related contracts."""

from __future__ import annotations

import datetime as _dt
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .contract import ContractTerms, build_corridor
from .exceptions import ConfigError, NumericError
from .optimizers import make_optimizer
from .strategies import NNParams, PVParams, initial_params, loss_and_grad, roll_strategy


@dataclass
class TrainConfig:
    """Settings of one training run.

    Every iteration draws ``batches_per_iter`` fresh batches of ``batch_size``
    paths and applies one optimizer step per batch.
    """

    iterations: int = 1000
    batch_size: int = 2**14
    batches_per_iter: int = 1
    optimizer: str = "psgld"
    optimizer_params: dict = field(default_factory=lambda: {"lr": 0.1})
    seed: int = 0
    strategy: str = "pv"
    hidden: tuple = (10, 10)
    input_spec: str = "basic"

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1 or self.batches_per_iter < 1:
            raise ConfigError("iterations, batch_size and batches_per_iter must all be >= 1")
        if self.strategy not in ("pv", "nn"):
            raise ConfigError(f"strategy must be 'pv' or 'nn', got {self.strategy!r}")
        self.hidden = tuple(int(h) for h in self.hidden)

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass
class TrainReport:
    trace: np.ndarray  # in-sample mean reward U_n per iteration
    wall_ms: np.ndarray  # cumulative wall-clock after each iteration
    params: PVParams | NNParams
    checkpoints: dict = field(default_factory=dict)  # iteration -> validation price
    phases: dict = field(default_factory=dict)  # phase name -> seconds

    @property
    def seconds(self) -> float:
        return float(sum(self.phases.values()))

    def trace_rows(self):
        return [(i + 1, float(u), float(w)) for i, (u, w) in enumerate(zip(self.trace, self.wall_ms))]


def train_batch(model, terms, config: TrainConfig, iteration: int, batch: int):
    """The ``batch``-th mini-batch of ``iteration``; disjoint stream per (seed, iteration, batch)."""
    return model.simulate(terms, config.batch_size, seed=(config.seed, rng.TRAIN_STREAM, iteration, batch))


def validation_batch(model, terms, n_paths: int, seed: int):
    return model.simulate(terms, n_paths, seed=(seed, rng.VALIDATION_STREAM))


def _initial(terms, model, config: TrainConfig):
    state_dim = getattr(model, "state_dim", 0)
    return initial_params(config.strategy, terms, config.hidden, config.input_spec, state_dim, config.seed)


def train(terms: ContractTerms, model, config: TrainConfig, init=None, checkpoints=(), validation=None,
          phase: str = "train"):
    """Maximize the smooth-rule expected reward by stochastic gradient steps.

    ``checkpoints`` lists iteration counts at which the smooth price of the
    current parameters on the fixed ``validation`` batch is recorded.
    """
    corridor = build_corridor(terms)
    params = init if init is not None else _initial(terms, model, config)
    params.check(terms, getattr(model, "state_dim", None))
    opt = make_optimizer(config.optimizer, seed=config.seed, **dict(config.optimizer_params))
    flat = params.flat()
    trace = np.empty(config.iterations)
    wall = np.empty(config.iterations)
    marks = {int(c) for c in checkpoints}
    if marks and validation is None:
        raise ConfigError("checkpoints need a validation batch")
    recorded = {}
    t0 = time.perf_counter()
    for it in range(config.iterations):
        rewards = []
        for b in range(config.batches_per_iter):
            batch = train_batch(model, terms, config, it, b)
            try:
                lg = loss_and_grad(params, terms, corridor, batch)
                flat = opt.step(flat, lg.grad)
            except NumericError as exc:
                raise NumericError(f"iteration {it}, batch {b}: {exc}", node=exc.node, iteration=it,
                                   seed=config.seed) from exc
            if not np.all(np.isfinite(flat)):
                raise NumericError(f"non-finite parameters after iteration {it}", iteration=it, seed=config.seed)
            params = params.with_flat(flat)
            rewards.append(-lg.loss)
        trace[it] = np.mean(rewards)
        wall[it] = (time.perf_counter() - t0) * 1e3
        if it + 1 in marks:
            recorded[it + 1] = float(roll_strategy(terms, corridor, params, validation, "smooth",
                                                   keep_volumes=False).rewards.mean())
    report = TrainReport(trace, wall, params, recorded, {phase: time.perf_counter() - t0})
    return params, report


# ----------------------------------------------------------------------------- transfer learning


def calendar_buckets(start: _dt.date, n_days: int) -> np.ndarray:
    """Month index (0 = month of ``start``) for each of ``n_days`` consecutive days."""
    days = [start + _dt.timedelta(days=i) for i in range(n_days)]
    return np.array([(d.year - start.year) * 12 + d.month - start.month for d in days])


def monthly_buckets(n_days: int = 365, year: int = 2022) -> np.ndarray:
    """Month of each day of a daily schedule starting on 1 January of ``year``."""
    return calendar_buckets(_dt.date(year, 1, 1), n_days)


def _check_buckets(buckets, n):
    buckets = np.asarray(buckets, dtype=int)
    if buckets.shape != (n,):
        raise ConfigError(f"bucket map has {buckets.size} entries for {n} exercise dates")
    if buckets[0] != 0 or np.any(np.diff(buckets) < 0) or np.any(np.diff(buckets) > 1):
        raise ConfigError("buckets must be contiguous, numbered 0, 1, ... in date order, none empty")
    return buckets


def bucket_middles(buckets) -> np.ndarray:
    """Index of each bucket's middle date (midpoint rounded down)."""
    buckets = np.asarray(buckets, dtype=int)
    out = []
    for j in range(buckets.max() + 1):
        members = np.flatnonzero(buckets == j)
        if members.size == 0:
            raise ConfigError(f"bucket {j} is empty")
        out.append(members[(members.size - 1) // 2])
    return np.array(out)


def aggregate_contract(terms: ContractTerms, buckets) -> ContractTerms:
    """One exercise date per bucket with summed local bounds; global bounds unchanged."""
    buckets = _check_buckets(buckets, terms.n)
    middles = bucket_middles(buckets)
    n_buckets = middles.size
    q_min = np.bincount(buckets, weights=terms.local_min, minlength=n_buckets)
    q_max = np.bincount(buckets, weights=terms.local_max, minlength=n_buckets)
    if n_buckets == terms.n:
        return terms
    return ContractTerms(terms.exercise_times[middles], q_min, q_max, terms.Q_min, terms.Q_max, terms.strike)


def aggregate_model(model, buckets):
    """Model restricted to the bucket middle dates (forward curve sub-sampled)."""
    return model.restrict(bucket_middles(buckets))


def transfer_params(agg_params, buckets, target_terms: ContractTerms, strategy_kind: str | None = None):
    """Map aggregated-contract parameters to the fine contract.

    PV coefficients are copied from each date's bucket; network parameters are
    date-independent and returned unchanged.
    """
    kind = strategy_kind or agg_params.kind
    if kind != agg_params.kind:
        raise ConfigError(f"parameters are {agg_params.kind!r}, requested {kind!r}")
    if kind == "nn":
        return agg_params
    buckets = _check_buckets(buckets, target_terms.n)
    if agg_params.n_dates != buckets.max() + 1:
        raise ConfigError(f"{agg_params.n_dates} aggregated rows for {buckets.max() + 1} buckets")
    return PVParams(agg_params.theta[buckets])


def warm_start(saved_params, new_terms: ContractTerms, new_model, config: TrainConfig, iterations: int = 0):
    """Reuse ``saved_params`` on a moved market, optionally continuing training."""
    try:
        saved_params.check(new_terms, getattr(new_model, "state_dim", None))
    except ConfigError as exc:
        raise ConfigError(f"saved parameters incompatible with new setting: {exc}") from exc
    if iterations <= 0:
        empty = np.empty(0)
        return saved_params, TrainReport(empty, empty, saved_params, {}, {"warm_start": 0.0})
    return train(new_terms, new_model, config.replace(iterations=iterations), init=saved_params,
                 phase="warm_start")


def transfer_train(terms: ContractTerms, model, config: TrainConfig, buckets, agg_iterations: int = 500,
                   fine_iterations: int = 300):
    """Pretrain on the aggregated contract, map parameters, then train on the full contract."""
    agg_terms = aggregate_contract(terms, buckets)
    agg_model = aggregate_model(model, buckets)
    agg_params, agg_report = train(agg_terms, agg_model, config.replace(iterations=agg_iterations),
                                   phase="aggregated")
    init = transfer_params(agg_params, buckets, terms, config.strategy)
    params, fine_report = train(terms, model, config.replace(iterations=fine_iterations, seed=config.seed + 1),
                                init=init, phase="fine")
    report = TrainReport(
        np.concatenate([agg_report.trace, fine_report.trace]),
        np.concatenate([agg_report.wall_ms, agg_report.wall_ms[-1] + fine_report.wall_ms]),
        params, {}, {**agg_report.phases, **fine_report.phases})
    return params, report
