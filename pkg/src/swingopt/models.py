"""Forward-curve diffusions producing spot paths at the exercise dates.

All simulations use exact transition sampling over each inter-date step, so the
only discretization is the exercise schedule itself.
"""

from __future__ import annotations

import datetime as _dt
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .contract import ContractTerms
from .exceptions import ConfigError


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Simulated paths ``[start, start + n_paths)`` of one stream.

    ``spots`` is ``(M, n)``; ``states`` is ``(M, n, d)`` and holds the factor
    levels ``X_t`` (factor models) or Brownian levels ``W_t(T_i)`` (multi-curve).
    """

    spots: np.ndarray
    states: np.ndarray
    seed: tuple = ()
    start: int = 0
    flags: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.spots.shape[0]

    @property
    def n_dates(self) -> int:
        return self.spots.shape[1]

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]


def _forward_curve(forward, terms: ContractTerms) -> np.ndarray:
    f = np.asarray(forward, dtype=float)
    if f.ndim == 0:
        return np.full(terms.n, float(f))
    if f.shape != (terms.n,):
        raise ConfigError(f"forward curve has {f.size} points for {terms.n} exercise dates")
    return f


def _steps(terms: ContractTerms) -> np.ndarray:
    """Time increments from valuation (t = 0) to each exercise date."""
    t = terms.exercise_times
    if t[0] < 0:
        raise ConfigError("exercise dates must not precede the valuation date")
    return np.diff(t, prepend=0.0)


def symmetric_sqrt(cov: np.ndarray) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix (negative eigenvalues clipped)."""
    if np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        return np.diag(np.sqrt(np.clip(np.diag(cov), 0.0, None)))
    w, v = np.linalg.eigh(cov)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def check_correlation(rho: np.ndarray, name: str = "correlation") -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ConfigError(f"{name} must be a square matrix")
    if not np.allclose(rho, rho.T, atol=1e-12) or not np.allclose(np.diag(rho), 1.0):
        raise ConfigError(f"{name} must be symmetric with unit diagonal")
    if np.linalg.eigvalsh(rho).min() < -1e-10:
        raise ConfigError(f"{name} is not positive semidefinite")
    return rho


def repair_correlation(rho, flag_tol: float = 1e-3) -> tuple[np.ndarray, bool]:
    """Symmetrize, clip negative eigenvalues, restore the unit diagonal.

    Returns the repaired matrix and whether any entry moved by more than ``flag_tol``.
    """
    raw = np.asarray(rho, dtype=float)
    sym = 0.5 * (raw + raw.T)
    w, v = np.linalg.eigh(sym)
    if w.min() < 0:
        sym = (v * np.clip(w, 0.0, None)) @ v.T
        d = np.sqrt(np.diag(sym))
        sym = sym / np.outer(d, d)
    np.fill_diagonal(sym, 1.0)
    return sym, bool(np.abs(sym - raw).max() > flag_tol)


@dataclass(frozen=True, eq=False)
class OneFactorModel:
    """``dF(t,T)/F(t,T) = vol * exp(-mean_reversion (T - t)) dW_t``."""

    mean_reversion: float = 4.0
    vol: float = 0.7
    forward: float | np.ndarray = 20.0

    kind = "one_factor"
    state_dim = 1

    def __post_init__(self):
        if self.mean_reversion <= 0:
            raise ConfigError("mean reversion must be positive")
        if self.vol < 0:
            raise ConfigError("volatility must be non-negative")
        if np.any(np.asarray(self.forward) <= 0):
            raise ConfigError("forward prices must be positive")

    def forward_curve(self, terms):
        return _forward_curve(self.forward, terms)

    def total_variance(self, times) -> np.ndarray:
        """``Sigma_t^2 = vol^2 / (2 lambda) (1 - exp(-2 lambda t))``."""
        lam = self.mean_reversion
        return self.vol**2 / (2 * lam) * -np.expm1(-2 * lam * np.asarray(times, dtype=float))

    def state_variance(self, times) -> np.ndarray:
        lam = self.mean_reversion
        return -np.expm1(-2 * lam * np.asarray(times, dtype=float)) / (2 * lam)

    def lognormal_factor(self, batch: PathBatch, terms) -> np.ndarray:
        """``exp(vol X_t - Sigma_t^2 / 2)`` per path and date (unit mean)."""
        return np.exp(self.vol * batch.states[:, :, 0] - 0.5 * self.total_variance(terms.exercise_times))

    def simulate(self, terms, n_paths, seed=0, start=0) -> PathBatch:
        return simulate_one_factor(self, terms, n_paths, seed, start)

    def restrict(self, indices) -> "OneFactorModel":
        if np.ndim(self.forward) == 0:
            return self
        return replace(self, forward=np.asarray(self.forward)[indices])

    def with_forward(self, forward) -> "OneFactorModel":
        return replace(self, forward=forward)

    def to_dict(self):
        return {"kind": self.kind, "mean_reversion": self.mean_reversion, "vol": self.vol,
                "forward": np.asarray(self.forward).tolist()}


def simulate_one_factor(model: OneFactorModel, terms, n_paths: int, seed=0, start: int = 0) -> PathBatch:
    """Exact OU recursion ``X <- e^{-lam dt} X + sqrt((1 - e^{-2 lam dt}) / (2 lam)) xi``."""
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    lam = model.mean_reversion
    dt = _steps(terms)
    decay = np.exp(-lam * dt)
    scale = np.sqrt(-np.expm1(-2 * lam * dt) / (2 * lam))
    x = rng.normals(seed, start, start + n_paths, terms.n, 1)[0]
    x[:, 0] *= scale[0]
    for k in range(1, terms.n):
        x[:, k] = decay[k] * x[:, k - 1] + scale[k] * x[:, k]
    spots = model.forward_curve(terms) * np.exp(
        model.vol * x - 0.5 * model.total_variance(terms.exercise_times))
    return PathBatch(spots, x[:, :, None], rng.as_entropy(seed), start)


@dataclass(frozen=True, eq=False)
class ThreeFactorModel:
    """Sum of three correlated exponentially-damped factors (any dimension works)."""

    vols: np.ndarray = (0.7, 0.7, 0.7)
    mean_reversions: np.ndarray = (1.5, 1.5, 1.5)
    correlation: np.ndarray = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    forward: float | np.ndarray = 20.0

    kind = "three_factor"

    def __post_init__(self):
        vols = np.asarray(self.vols, dtype=float)
        lams = np.asarray(self.mean_reversions, dtype=float)
        if vols.shape != lams.shape or vols.ndim != 1:
            raise ConfigError("vols and mean_reversions must be vectors of equal length")
        if np.any(lams <= 0) or np.any(vols < 0):
            raise ConfigError("mean reversions must be positive and vols non-negative")
        rho = check_correlation(self.correlation)
        if rho.shape[0] != vols.size:
            raise ConfigError("correlation size does not match the number of factors")
        object.__setattr__(self, "vols", vols)
        object.__setattr__(self, "mean_reversions", lams)
        object.__setattr__(self, "correlation", rho)

    @classmethod
    def uniform(cls, rho: float, vol: float = 0.7, mean_reversion: float = 1.5, forward=20.0, dim: int = 3):
        corr = np.full((dim, dim), rho)
        np.fill_diagonal(corr, 1.0)
        return cls(np.full(dim, vol), np.full(dim, mean_reversion), corr, forward)

    @property
    def state_dim(self) -> int:
        return self.vols.size

    def forward_curve(self, terms):
        return _forward_curve(self.forward, terms)

    def _cross(self, times) -> np.ndarray:
        """``rho_ij (1 - exp(-(lam_i + lam_j) t)) / (lam_i + lam_j)`` for each time."""
        lsum = self.mean_reversions[:, None] + self.mean_reversions[None, :]
        t = np.asarray(times, dtype=float)[..., None, None]
        return self.correlation * -np.expm1(-lsum * t) / lsum

    def total_variance(self, times) -> np.ndarray:
        s = self.vols
        return np.einsum("i,...ij,j->...", s, self._cross(times), s)

    def lognormal_factor(self, batch: PathBatch, terms) -> np.ndarray:
        return np.exp(batch.states @ self.vols - 0.5 * self.total_variance(terms.exercise_times))

    def simulate(self, terms, n_paths, seed=0, start=0) -> PathBatch:
        return simulate_three_factor(self, terms, n_paths, seed, start)

    def restrict(self, indices):
        if np.ndim(self.forward) == 0:
            return self
        return replace(self, forward=np.asarray(self.forward)[indices])

    def with_forward(self, forward):
        return replace(self, forward=forward)

    def to_dict(self):
        return {"kind": self.kind, "vols": self.vols.tolist(), "mean_reversions": self.mean_reversions.tolist(),
                "correlation": self.correlation.tolist(), "forward": np.asarray(self.forward).tolist()}


def simulate_three_factor(model: ThreeFactorModel, terms, n_paths: int, seed=0, start: int = 0) -> PathBatch:
    """Correlated OU factors; each step draws from the exact joint step covariance."""
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    d = model.state_dim
    dt = _steps(terms)
    z = rng.normals(seed, start, start + n_paths, terms.n, d)
    states = np.empty((n_paths, terms.n, d))
    x = np.zeros((n_paths, d))
    cache = {}
    for k in range(terms.n):
        key = round(float(dt[k]), 14)
        if key not in cache:
            cache[key] = (np.exp(-model.mean_reversions * dt[k]), symmetric_sqrt(model._cross(dt[k])))
        decay, root = cache[key]
        x = x * decay + z[:, :, k].T @ root.T
        states[:, k, :] = x
    spots = model.forward_curve(terms) * np.exp(
        states @ model.vols - 0.5 * model.total_variance(terms.exercise_times))
    return PathBatch(spots, states, rng.as_entropy(seed), start)


@dataclass(frozen=True, eq=False)
class MultiCurveModel:
    """One driftless lognormal forward per delivery month, correlated Brownians.

    ``factor_of_date[l]`` is the factor whose forward is the spot at exercise date
    ``l``. The correlation matrix is symmetrized and projected to PSD on
    construction; ``repaired`` records whether that moved any entry by > 1e-3.
    """

    vols: np.ndarray
    correlation: np.ndarray
    forwards: np.ndarray
    factor_of_date: np.ndarray
    maturities: np.ndarray | None = None
    repaired: bool = field(default=False, init=False)

    kind = "multi_curve"

    def __post_init__(self):
        vols = np.asarray(self.vols, dtype=float)
        fwd = np.asarray(self.forwards, dtype=float)
        idx = np.asarray(self.factor_of_date, dtype=int)
        if vols.ndim != 1 or fwd.shape != vols.shape:
            raise ConfigError("vols and forwards must be vectors with one entry per factor")
        if np.any(fwd <= 0) or np.any(vols < 0):
            raise ConfigError("forwards must be positive and vols non-negative")
        if idx.ndim != 1 or idx.min() < 0 or idx.max() >= vols.size:
            raise ConfigError("factor_of_date must map every exercise date to a factor")
        rho, moved = repair_correlation(self.correlation)
        if rho.shape != (vols.size, vols.size):
            raise ConfigError("correlation size does not match the number of factors")
        if moved:
            warnings.warn("multi-curve correlation repaired by more than 1e-3", RuntimeWarning, stacklevel=3)
        object.__setattr__(self, "vols", vols)
        object.__setattr__(self, "forwards", fwd)
        object.__setattr__(self, "factor_of_date", idx)
        object.__setattr__(self, "correlation", rho)
        object.__setattr__(self, "repaired", moved)

    @property
    def state_dim(self) -> int:
        return self.vols.size

    def forward_curve(self, terms):
        self._check(terms)
        return self.forwards[self.factor_of_date]

    def _check(self, terms):
        if self.factor_of_date.size != terms.n:
            raise ConfigError("month mapping does not cover the exercise dates")

    def simulate(self, terms, n_paths, seed=0, start=0) -> PathBatch:
        return simulate_multi_curve(self, terms, n_paths, seed, start)

    def restrict(self, indices):
        return replace(self, factor_of_date=self.factor_of_date[indices])

    def with_forward(self, forward):
        return replace(self, forwards=np.broadcast_to(np.asarray(forward, dtype=float), self.vols.shape).copy())

    def to_dict(self):
        return {"kind": self.kind, "vols": self.vols.tolist(), "correlation": self.correlation.tolist(),
                "forwards": self.forwards.tolist(), "factor_of_date": self.factor_of_date.tolist()}


def simulate_multi_curve(model: MultiCurveModel, terms, n_paths: int, seed=0, start: int = 0) -> PathBatch:
    """Exact GBM per factor; spot at ``t_l`` is the forward of that date's month observed at ``t_l``."""
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    model._check(terms)
    p = model.state_dim
    dt = _steps(terms)
    times = terms.exercise_times
    root = symmetric_sqrt(model.correlation)
    z = rng.normals(seed, start, start + n_paths, terms.n, p)
    states = np.empty((n_paths, terms.n, p))
    w = np.zeros((n_paths, p))
    for k in range(terms.n):
        w = w + np.sqrt(dt[k]) * (z[:, :, k].T @ root.T)
        states[:, k, :] = w
    m = model.factor_of_date
    sig = model.vols[m]
    w_own = np.take_along_axis(states, np.broadcast_to(m[None, :, None], (n_paths, terms.n, 1)), axis=2)[:, :, 0]
    spots = model.forwards[m] * np.exp(sig * w_own - 0.5 * sig**2 * times)
    return PathBatch(spots, states, rng.as_entropy(seed), start, {"correlation_repaired": model.repaired})


# Market data observed on 17 March 2021 for the 2022 delivery months.
MULTICURVE_2022_VARIANCE_PCT = (45.09, 44.88, 42.63, 40.57, 36.99, 34.37, 31.18, 29.59, 30.22, 30.60, 31.05, 30.25)
MULTICURVE_2022_FORWARDS = (20.07, 20.0, 19.6, 17.4, 16.75, 16.5, 16.56, 16.53, 16.71, 17.31, 18.31, 18.64)
MULTICURVE_2022_CORRELATION_PCT = (
    (100, 99.62, 98.61, 91.12, 91.12, 91.12, 90.24, 90.24, 90.24, 87.2, 87.2, 87.2),
    (99.62, 100, 98.91, 91.65, 91.65, 91.65, 90.68, 90.68, 90.68, 87.8, 87.8, 87.8),
    (98.61, 98.61, 100, 93.89, 93.89, 93.89, 92.79, 92.79, 92.79, 89.94, 89.94, 89.94),
    (91.12, 91.65, 93.89, 100, 100, 100, 99.47, 99.47, 99.47, 97.06, 97.06, 97.06),
    (91.12, 91.65, 93.89, 100, 100, 100, 99.47, 99.47, 99.47, 97.06, 97.06, 97.06),
    (91.12, 91.65, 93.89, 100, 100, 100, 99.47, 99.47, 99.47, 97.06, 97.06, 97.06),
    (90.24, 90.68, 92.79, 99.4, 99.47, 99.4, 100, 100, 100, 97.32, 97.32, 97.32),
    (90.24, 90.68, 92.79, 99.47, 99.47, 99.47, 100, 100, 100, 97.32, 97.32, 97.32),
    (90.24, 90.68, 92.79, 99.47, 99.47, 99.47, 100, 100, 100, 97.32, 97.32, 97.32),
    (87.2, 87.8, 89.94, 97.06, 97.06, 97.06, 97.32, 97.32, 97.32, 100, 100, 100),
    (87.2, 87.8, 89.94, 97.06, 97.06, 97.06, 97.32, 97.32, 97.32, 100, 100, 100),
    (87.2, 87.8, 89.94, 97.06, 97.06, 97.06, 97.32, 97.32, 97.32, 100, 100, 100),
)


def daily_calendar(valuation: _dt.date, first: _dt.date, last: _dt.date):
    """ACT/365 year fractions and month factor index (0 = month of ``first``) per day."""
    days = (last - first).days + 1
    dates = [first + _dt.timedelta(days=i) for i in range(days)]
    times = np.array([(d - valuation).days / 365.0 for d in dates])
    month = np.array([(d.year - first.year) * 12 + d.month - first.month for d in dates])
    return times, month


def multicurve_2022(q_min=0.0, q_max=1.0, Q_min=180.0, Q_max=270.0, strike=None):
    """Calendar-2022 daily swing with the 12-month multi-curve model as of 2021-03-17.

    The strike defaults to the average initial forward (17.865).
    """
    times, month = daily_calendar(_dt.date(2021, 3, 17), _dt.date(2022, 1, 1), _dt.date(2022, 12, 31))
    forwards = np.array(MULTICURVE_2022_FORWARDS)
    if strike is None:
        strike = float(forwards.mean())
    terms = ContractTerms(times, q_min, q_max, Q_min, Q_max, strike)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model = MultiCurveModel(
            vols=np.sqrt(np.array(MULTICURVE_2022_VARIANCE_PCT) / 100.0),
            correlation=np.array(MULTICURVE_2022_CORRELATION_PCT) / 100.0,
            forwards=forwards,
            factor_of_date=month,
        )
    return terms, model
