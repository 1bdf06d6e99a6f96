"""Out-of-sample Monte-Carlo pricing, forward deltas and estimator studies."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from . import rng
from .contract import ContractTerms, build_corridor
from .exceptions import ConfigError
from .strategies import MODES, roll_strategy
from .training import TrainConfig, train

Z95 = 1.96
DEFAULT_CHUNK = 2**17
#: cap on path-array elements (paths x dates x state columns) simulated at once
ELEMENT_BUDGET = 2**24


class RunningMoments:
    """Count, mean and sum of squared deviations, merged chunk by chunk (Chan et al.)."""

    def __init__(self, shape=()):
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    @classmethod
    def of(cls, samples) -> "RunningMoments":
        samples = np.asarray(samples, dtype=float)
        out = cls(samples.shape[1:])
        out.count = samples.shape[0]
        if out.count:
            out.mean = samples.mean(axis=0)
            out.m2 = ((samples - out.mean) ** 2).sum(axis=0)
        return out

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean.copy(), other.m2.copy()
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / n)
        self.m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / n)
        self.count = n
        return self

    def update(self, samples) -> "RunningMoments":
        return self.merge(RunningMoments.of(samples))

    @property
    def variance(self):
        return self.m2 / (self.count - 1) if self.count > 1 else np.zeros_like(self.mean)

    @property
    def std_error(self):
        return np.sqrt(self.variance / max(self.count, 1))


@dataclass(frozen=True)
class PriceEstimate:
    mean: float
    std_error: float
    sample_count: int
    mode: str = "bang_bang"
    wall_ms: float = 0.0

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.mean - Z95 * self.std_error, self.mean + Z95 * self.std_error)

    def row(self) -> dict:
        lo, hi = self.ci95
        return {"mode": self.mode, "mean": self.mean, "se": self.std_error, "ci_lo": lo, "ci_hi": hi,
                "M_e": self.sample_count, "wall_ms": self.wall_ms}


def chunk_size_for(terms: ContractTerms, model, requested: int = DEFAULT_CHUNK) -> int:
    """Largest multiple of the RNG block size within the memory budget (at least one block)."""
    per_path = terms.n * (getattr(model, "state_dim", 1) + 3)
    cap = max(rng.BLOCK_SIZE, ELEMENT_BUDGET // per_path)
    size = min(int(requested), cap)
    return max(rng.BLOCK_SIZE, size - size % rng.BLOCK_SIZE)


def _chunks(n_paths, chunk):
    return [(s, min(s + chunk, n_paths)) for s in range(0, n_paths, chunk)]


def _map_chunks(fn, n_paths, chunk, threads):
    bounds = _chunks(n_paths, chunk)
    if threads and threads > 1 and len(bounds) > 1:
        return Parallel(n_jobs=threads, prefer="threads")(delayed(fn)(a, b) for a, b in bounds)
    return [fn(a, b) for a, b in bounds]


def eval_seed(seed):
    return (*rng.as_entropy(seed), rng.EVAL_STREAM)


def price(terms: ContractTerms, model, params, n_paths: int = 10**6, mode: str = "bang_bang", seed=0,
          chunk_size: int = DEFAULT_CHUNK, threads: int = 1) -> PriceEstimate:
    """Monte-Carlo value of ``params`` on ``n_paths`` fresh paths, streamed chunk by chunk.

    Path ``m`` is the same whatever the chunk size or thread count, and chunk
    moments are merged in chunk order, so the estimate is reproducible bit for bit
    for a given chunking.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if n_paths < 2:
        raise ConfigError("need at least two evaluation paths")
    corridor = build_corridor(terms)
    params.check(terms, getattr(model, "state_dim", None))
    chunk = chunk_size_for(terms, model, chunk_size)
    stream = eval_seed(seed)
    t0 = time.perf_counter()

    def run(a, b):
        batch = model.simulate(terms, b - a, seed=stream, start=a)
        return RunningMoments.of(roll_strategy(terms, corridor, params, batch, mode, keep_volumes=False).rewards)

    acc = RunningMoments()
    for part in _map_chunks(run, n_paths, chunk, threads):
        acc.merge(part)
    return PriceEstimate(float(acc.mean), float(acc.std_error), acc.count, mode, (time.perf_counter() - t0) * 1e3)


@dataclass(frozen=True)
class DeltaCurve:
    times: np.ndarray
    delta: np.ndarray
    std_error: np.ndarray
    sample_count: int

    def rows(self):
        return [(k, float(t), float(d), float(s))
                for k, (t, d, s) in enumerate(zip(self.times, self.delta, self.std_error))]


def delta_forward(terms: ContractTerms, model, params, n_paths: int = 10**6, mode: str = "bang_bang", seed=0,
                  chunk_size: int = DEFAULT_CHUNK, threads: int = 1) -> DeltaCurve:
    """Sensitivity to each initial forward: ``E[q_k * exp(<vol, X_k> - Sigma_k^2 / 2)]``.

    The trained rule stands in for the optimal control, so these are the
    deltas of the parametric optimum.
    """
    if not hasattr(model, "lognormal_factor"):
        raise ConfigError(f"forward delta is only available for factor models, not {model.kind!r}")
    corridor = build_corridor(terms)
    chunk = chunk_size_for(terms, model, chunk_size)
    stream = eval_seed(seed)

    def run(a, b):
        batch = model.simulate(terms, b - a, seed=stream, start=a)
        vols = roll_strategy(terms, corridor, params, batch, mode).volumes
        return RunningMoments.of(vols * model.lognormal_factor(batch, terms))

    acc = RunningMoments((terms.n,))
    for part in _map_chunks(run, n_paths, chunk, threads):
        acc.merge(part)
    return DeltaCurve(terms.exercise_times.copy(), acc.mean, acc.std_error, acc.count)


# ----------------------------------------------------------------------------- convergence rate


@dataclass
class ConvergenceResult:
    alpha: float
    log_n: np.ndarray
    log_abs_diff: np.ndarray
    values: dict = field(default_factory=dict)
    dropped: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.log_n.tolist(), self.log_abs_diff.tolist()))


def convergence_rate(values: dict) -> ConvergenceResult:
    """Slope of ``log|U_2n - U_n|`` against ``log(1/n)`` over all available pairs."""
    ns = sorted(n for n in values if 2 * n in values)
    xs, ys, dropped = [], [], []
    for n in ns:
        diff = abs(values[2 * n] - values[n])
        if diff == 0:
            dropped.append(n)
            continue
        xs.append(np.log(n))
        ys.append(np.log(diff))
    if dropped:
        warnings.warn(f"dropped {len(dropped)} pairs with |U_2n - U_n| = 0", RuntimeWarning, stacklevel=2)
    if len(xs) < 2:
        raise ConfigError("need at least two (n, 2n) pairs with distinct values")
    log_n, log_d = np.array(xs), np.array(ys)
    slope = np.polyfit(-log_n, log_d, 1)[0]
    return ConvergenceResult(float(slope), log_n, log_d, dict(values), dropped)


def log_grid(max_n: int, points: int = 12) -> list[int]:
    """Roughly log-spaced iteration counts ``n`` with ``2n <= max_n``."""
    grid = np.unique(np.round(np.geomspace(1, max_n // 2, points)).astype(int))
    return [int(g) for g in grid if g >= 1]


def convergence_study(terms, model, config: TrainConfig, n_grid=None, validation_paths: int = 2**16,
                      validation_seed: int = 12345):
    """Train once, recording the validation price ``U_n`` at ``n`` and ``2n`` for each grid point."""
    n_grid = list(n_grid) if n_grid is not None else log_grid(config.iterations)
    marks = sorted({int(n) for n in n_grid} | {2 * int(n) for n in n_grid})
    if marks[-1] > config.iterations:
        config = config.replace(iterations=marks[-1])
    validation = model.simulate(terms, validation_paths, seed=(validation_seed, rng.VALIDATION_STREAM))
    params, report = train(terms, model, config, checkpoints=marks, validation=validation)
    return convergence_rate(report.checkpoints), params, report


# ----------------------------------------------------------------------------- variance study


@dataclass
class VarianceResult:
    rows: list  # (M_e, replication, price)
    summary: dict  # M_e -> (mean, std)
    slope: float  # d log std / d log M_e

    def ratios(self):
        levels = sorted(self.summary)
        return {(a, b): self.summary[a][1] / self.summary[b][1] for a, b in zip(levels[:-1], levels[1:])}


def variance_study(terms, model, config: TrainConfig, replications: int = 20, me_grid=(10**4, 10**5, 10**6),
                   mode: str = "bang_bang", eval_seed_base: int = 1000, threads: int = 1):
    """Replicated train-then-evaluate prices at several evaluation sizes.

    Replication ``r`` trains once with seed ``config.seed + r`` and is evaluated
    at each ``M_e`` on its own independent stream.
    """
    if replications < 2:
        raise ConfigError("need at least two replications")
    rows = []
    for r in range(replications):
        params, _ = train(terms, model, config.replace(seed=config.seed + r))
        for j, me in enumerate(me_grid):
            est = price(terms, model, params, int(me), mode, seed=(eval_seed_base, r, j), threads=threads)
            rows.append((int(me), r, est.mean))
    return summarize_variance(rows)


def summarize_variance(rows) -> VarianceResult:
    arr = np.array(rows, dtype=float)
    summary = {}
    for me in sorted(set(arr[:, 0])):
        vals = arr[arr[:, 0] == me, 2]
        summary[int(me)] = (float(vals.mean()), float(vals.std(ddof=1)))
    levels = np.array(sorted(summary))
    stds = np.array([summary[m][1] for m in levels])
    slope = float(np.polyfit(np.log(levels), np.log(stds), 1)[0]) if levels.size > 1 else float("nan")
    return VarianceResult([tuple(r) for r in rows], summary, slope)
