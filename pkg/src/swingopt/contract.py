"""Swing contract terms, attainable-volume corridor and normalization."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ConfigError, InfeasibleContractError, StateError

#: absolute slack (volume units) when checking that a cumulative volume is reachable
REACH_TOL = 1e-9


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ContractTerms:
    """Exercise schedule and firm volume constraints of a swing contract.

    ``q_min`` / ``q_max`` are normally scalars. Date-aggregated contracts carry
    one local bound per exercise date, so arrays of length ``n`` are accepted too.
    """

    exercise_times: np.ndarray
    q_min: float | np.ndarray
    q_max: float | np.ndarray
    Q_min: float
    Q_max: float
    strike: float

    def __post_init__(self):
        times = _frozen(self.exercise_times)
        object.__setattr__(self, "exercise_times", times)
        if times.ndim != 1 or times.size == 0:
            raise ConfigError("exercise_times must be a non-empty 1-D array")
        if np.any(np.diff(times) <= 0):
            raise ConfigError("exercise_times must be strictly increasing")
        for name in ("q_min", "q_max"):
            v = getattr(self, name)
            if np.ndim(v) == 0:
                object.__setattr__(self, name, float(v))
            else:
                v = _frozen(v)
                if v.shape != times.shape:
                    raise ConfigError(f"{name} must be scalar or have one entry per exercise date")
                object.__setattr__(self, name, v)
        object.__setattr__(self, "Q_min", float(self.Q_min))
        object.__setattr__(self, "Q_max", float(self.Q_max))
        object.__setattr__(self, "strike", float(self.strike))

        lo, hi = self.local_min, self.local_max
        if np.any(lo < 0) or np.any(lo > hi):
            raise ConfigError("local bounds must satisfy 0 <= q_min <= q_max")
        if not 0 <= self.Q_min <= self.Q_max:
            raise ConfigError("global bounds must satisfy 0 <= Q_min <= Q_max")
        if lo.sum() > self.Q_max or hi.sum() < self.Q_min:
            raise InfeasibleContractError(
                f"no admissible strategy: sum(q_min)={lo.sum():g}, sum(q_max)={hi.sum():g}, "
                f"[Q_min, Q_max]=[{self.Q_min:g}, {self.Q_max:g}]"
            )

    @classmethod
    def uniform(cls, n, maturity, q_min, q_max, Q_min, Q_max, strike, lag_steps: int = 0):
        """Contract with exercise dates ``t_l = (l + lag_steps) * maturity / n``, ``l = 0..n-1``.

        With ``lag_steps = 0`` the first date coincides with valuation and its spot
        is known; ``lag_steps = 1`` puts valuation one delivery step earlier.
        """
        if lag_steps < 0:
            raise ConfigError("lag_steps must be >= 0")
        times = (np.arange(n) + lag_steps) * (maturity / n)
        return cls(times, q_min, q_max, Q_min, Q_max, strike)

    @property
    def n(self) -> int:
        return self.exercise_times.size

    @property
    def maturity(self) -> float:
        """End of the delivery period, one step past the last exercise date."""
        t = self.exercise_times
        step = t[-1] - t[-2] if t.size > 1 else (t[0] if t[0] > 0 else 1.0)
        return float(t[-1] + step)

    @property
    def local_min(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.q_min, dtype=float), (self.n,))

    @property
    def local_max(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.q_max, dtype=float), (self.n,))

    @property
    def has_uniform_local(self) -> bool:
        return np.ndim(self.q_min) == 0 and np.ndim(self.q_max) == 0

    def replace(self, **changes) -> "ContractTerms":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        def plain(v):
            return v.tolist() if isinstance(v, np.ndarray) else v

        return {
            "exercise_times": self.exercise_times.tolist(),
            "q_min": plain(self.q_min),
            "q_max": plain(self.q_max),
            "Q_min": self.Q_min,
            "Q_max": self.Q_max,
            "strike": self.strike,
        }


@dataclass(frozen=True, eq=False)
class VolumeCorridor:
    """Lower and upper attainable cumulative volume at ``t_0 .. t_n``."""

    q_down: np.ndarray
    q_up: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q_down", _frozen(self.q_down))
        object.__setattr__(self, "q_up", _frozen(self.q_up))


def build_corridor(terms: ContractTerms) -> VolumeCorridor:
    """Physical space of the contract.

    With ``q_min = 0`` this is exactly::

        Q_down(t_l) = max(0, Q_min - (n - l) q_max)
        Q_up(t_l)   = min(l q_max, Q_max)

    with ``Q_down(t_0) = Q_up(t_0) = 0``, ``Q_down(t_n) = Q_min``,
    ``Q_up(t_n) = Q_max``. Positive (or date-dependent) local minima tighten the
    upper edge by the volume that must still be bought after ``t_l``, otherwise a
    path could reach a level from which the remaining forced purchases overshoot
    ``Q_max``.
    """
    n = terms.n
    lo, hi = terms.local_min, terms.local_max
    bought_max = np.concatenate(([0.0], np.cumsum(hi)))  # sum_{i<l} q_max_i
    rest_max = bought_max[-1] - bought_max  # sum_{i>=l} q_max_i
    rest_min = np.concatenate((np.cumsum(lo[::-1])[::-1], [0.0]))  # sum_{i>=l} q_min_i

    q_down = np.maximum(0.0, terms.Q_min - rest_max)
    q_up = np.minimum(bought_max, terms.Q_max - rest_min)
    q_down[0] = q_up[0] = 0.0
    q_down[n] = terms.Q_min
    q_up[n] = terms.Q_max
    if np.any(q_down > q_up + REACH_TOL):
        raise InfeasibleContractError("empty attainable corridor")
    return VolumeCorridor(q_down, q_up)


def admissible_interval(terms: ContractTerms, corridor: VolumeCorridor, date: int, Q):
    """Range ``[A-, A+]`` of volumes purchasable at ``t_date`` from cumulative ``Q``.

    Works elementwise on arrays of cumulative volumes.
    """
    Q = np.asarray(Q, dtype=float)
    if not 0 <= date < terms.n:
        raise IndexError(f"date index {date} outside 0..{terms.n - 1}")
    if np.any(Q < corridor.q_down[date] - REACH_TOL) or np.any(Q > corridor.q_up[date] + REACH_TOL):
        raise StateError(
            f"cumulative volume outside [{corridor.q_down[date]:g}, {corridor.q_up[date]:g}] at date {date}"
        )
    low = np.maximum(corridor.q_down[date + 1], Q + terms.local_min[date])
    high = np.minimum(corridor.q_up[date + 1], Q + terms.local_max[date])
    return low - Q, high - Q


def normalize(terms: ContractTerms):
    """Reduce to a contract with local bounds ``[0, 1]``.

    Returns ``(normalized_terms, fixed_multiplier, optional_multiplier)`` such that
    ``P_0 = fixed_multiplier * E[sum_l (S_l - K)] + optional_multiplier * P~_0``.
    A contract with ``q_min == q_max`` has no optional leg: ``normalized_terms`` is
    then ``None`` and the optional multiplier is zero.
    """
    if not terms.has_uniform_local:
        raise ConfigError("normalization needs date-independent local bounds")
    q_min, q_max, n = terms.q_min, terms.q_max, terms.n
    width = q_max - q_min
    if width == 0:
        return None, q_min, 0.0
    Q_min = max(terms.Q_min - n * q_min, 0.0) / width
    Q_max = max(terms.Q_max - n * q_min, 0.0) / width
    normalized = ContractTerms(terms.exercise_times, 0.0, 1.0, Q_min, Q_max, terms.strike)
    return normalized, q_min, width


def case1_terms(strike: float = 20.0) -> ContractTerms:
    """31 daily exercise dates from one day after valuation, ``q in [0, 6]``, ``Q in [140, 200]``."""
    return ContractTerms.uniform(31, 31 / 365, 0.0, 6.0, 140.0, 200.0, strike, lag_steps=1)


def case2_terms(strike: float = 20.0, Q_min: float = 1300.0, Q_max: float = 1900.0) -> ContractTerms:
    """One year of daily exercise from one day after valuation, ``q in [0, 6]``, ``Q in [1300, 1900]``."""
    return ContractTerms.uniform(365, 1.0, 0.0, 6.0, Q_min, Q_max, strike, lag_steps=1)
