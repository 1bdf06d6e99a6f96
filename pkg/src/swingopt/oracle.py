"""Exact dynamic-programming value of small swing contracts on a spot lattice.

The lattice is a Markov chain on finitely many spot values per date. Cumulative
volumes live on a grid of step ``volume_step``; every volume appearing in the
contract must sit exactly on that grid. The backward induction enumerates every
grid purchase, so it does not rely on the optimal policy being bang-bang.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .contract import ContractTerms
from .exceptions import ConfigError, GridError
from .models import PathBatch

GRID_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class LatticeSpec:
    """Spot values per date, date-0 distribution and one-step transition matrices.

    ``values[k]`` has one entry per node at date ``k``; ``transitions[k]`` is the
    row-stochastic matrix from date ``k`` nodes to date ``k + 1`` nodes.
    """

    values: tuple
    initial: np.ndarray
    transitions: tuple
    volume_step: float | None = None

    kind = "lattice"
    state_dim = 1

    def __post_init__(self):
        values = tuple(np.asarray(v, dtype=float).ravel() for v in self.values)
        trans = tuple(np.asarray(t, dtype=float) for t in self.transitions)
        init = np.asarray(self.initial, dtype=float).ravel()
        if len(trans) != len(values) - 1:
            raise ConfigError("need one transition matrix between consecutive dates")
        if init.shape != values[0].shape or not np.isclose(init.sum(), 1.0, atol=1e-12) or np.any(init < 0):
            raise ConfigError("initial distribution must be a probability vector over date-0 nodes")
        for k, t in enumerate(trans):
            if t.shape != (values[k].size, values[k + 1].size):
                raise ConfigError(f"transition {k} has shape {t.shape}")
            if np.any(t < 0) or not np.allclose(t.sum(axis=1), 1.0, atol=1e-12):
                raise ConfigError(f"transition {k} rows must be probability vectors")
        if any(np.any(v <= 0) for v in values):
            raise ConfigError("spot values must be positive")
        if self.volume_step is not None and self.volume_step <= 0:
            raise ConfigError("volume step must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "transitions", trans)
        object.__setattr__(self, "initial", init)

    @property
    def n_dates(self) -> int:
        return len(self.values)

    @classmethod
    def binomial(cls, spot0: float, up: float, down: float, n_dates: int, p_up: float | None = None,
                 volume_step=None) -> "LatticeSpec":
        """Recombining tree; ``p_up`` defaults to the martingale probability."""
        if not 0 < down < 1 < up:
            raise ConfigError("need 0 < down < 1 < up")
        p = (1 - down) / (up - down) if p_up is None else p_up
        values, trans = [], []
        for k in range(n_dates):
            j = np.arange(k + 1)
            values.append(spot0 * up**j * down ** (k - j))
            if k:
                t = np.zeros((k, k + 1))
                t[np.arange(k), np.arange(k)] = 1 - p
                t[np.arange(k), np.arange(k) + 1] = p
                trans.append(t)
        return cls(tuple(values), np.ones(1), tuple(trans), volume_step)

    def expected_spots(self) -> np.ndarray:
        out, dist = [], self.initial
        for k, v in enumerate(self.values):
            out.append(dist @ v)
            if k < len(self.transitions):
                dist = dist @ self.transitions[k]
        return np.array(out)

    def forward_curve(self, terms):
        return self.expected_spots()

    def simulate(self, terms, n_paths: int, seed=0, start: int = 0) -> PathBatch:
        """Sample node trajectories; state column holds ``log(S / E[S_0])``."""
        if terms.n != self.n_dates:
            raise ConfigError(f"lattice has {self.n_dates} dates, contract {terms.n}")
        u = rng.uniforms(seed, start, start + n_paths, self.n_dates)
        nodes = np.empty((n_paths, self.n_dates), dtype=int)
        nodes[:, 0] = np.minimum(np.searchsorted(np.cumsum(self.initial), u[:, 0], side="right"),
                                 self.initial.size - 1)
        for k, t in enumerate(self.transitions):
            cdf = np.cumsum(t, axis=1)[nodes[:, k]]
            nodes[:, k + 1] = np.minimum((u[:, k + 1, None] >= cdf).sum(axis=1), t.shape[1] - 1)
        spots = np.empty((n_paths, self.n_dates))
        for k, v in enumerate(self.values):
            spots[:, k] = v[nodes[:, k]]
        ref = float(self.initial @ self.values[0])
        return PathBatch(spots, np.log(spots / ref)[:, :, None], rng.as_entropy(seed), start)

    def restrict(self, indices):
        raise ConfigError("lattices cannot be sub-sampled")


def _on_grid(x, step, what):
    r = np.asarray(x, dtype=float) / step
    if np.any(np.abs(r - np.round(r)) > GRID_TOL * np.maximum(1.0, np.abs(r))):
        raise GridError(f"{what} is not a multiple of the volume step {step:g}")
    return np.round(r).astype(int)


@dataclass
class DPResult:
    value: float
    policy: list  # policy[k][node, state] = grid units bought
    states: list  # states[k] = grid indices of reachable cumulative volumes at date k
    values: list  # values[k][node, state]
    volume_step: float
    bang_bang: list  # bang_bang[k][node, state]: purchase at an interval endpoint


def dp_value(terms: ContractTerms, lattice: LatticeSpec, volume_step: float | None = None) -> DPResult:
    """Optimal expected reward by backward induction over (date, node, cumulative volume)."""
    step = volume_step or lattice.volume_step
    if step is None:
        raise GridError("no volume step given")
    n = terms.n
    if n != lattice.n_dates:
        raise ConfigError(f"lattice has {lattice.n_dates} dates, contract {n}")
    if n > 10:
        raise ConfigError("the exact oracle is meant for at most 10 dates")
    qlo = _on_grid(terms.local_min, step, "q_min")
    qhi = _on_grid(terms.local_max, step, "q_max")
    gmin = int(_on_grid(terms.Q_min, step, "Q_min"))
    gmax = int(_on_grid(terms.Q_max, step, "Q_max"))

    # reachable cumulative volume before the purchase at date k (k = 0..n), in grid units
    done_lo = np.concatenate(([0], np.cumsum(qlo)))
    done_hi = np.concatenate(([0], np.cumsum(qhi)))
    left_lo = done_lo[-1] - done_lo
    left_hi = done_hi[-1] - done_hi
    lo = np.maximum(done_lo, gmin - left_hi)
    hi = np.minimum(done_hi, gmax - left_lo)
    if np.any(lo > hi):
        raise ConfigError("contract infeasible on the volume grid")
    states = [np.arange(lo[k], hi[k] + 1) for k in range(n + 1)]
    if states[-1].size * max(v.size for v in lattice.values) * n > 10**7:
        raise ConfigError("instance too large for the exact oracle")

    K = terms.strike
    nxt = np.zeros((1, states[n].size))  # date-n value, independent of node
    policy, values, bang = [None] * n, [None] * n, [None] * n
    for k in range(n - 1, -1, -1):
        payoff = lattice.values[k] - K
        if k == n - 1:
            cont = np.broadcast_to(nxt, (payoff.size, states[n].size))
        else:
            cont = lattice.transitions[k] @ nxt  # (nodes_k, states_{k+1})
        Q = states[k]
        a_lo = np.maximum(qlo[k], lo[k + 1] - Q)
        a_hi = np.minimum(qhi[k], hi[k + 1] - Q)
        actions = np.arange(qlo[k], qhi[k] + 1)
        vals = np.full((actions.size, payoff.size, Q.size), -np.inf)
        for i, a in enumerate(actions):
            ok = (a >= a_lo) & (a <= a_hi)
            if np.any(ok):
                idx = Q[ok] + a - lo[k + 1]
                vals[i][:, ok] = a * step * payoff[:, None] + cont[:, idx]
        best = vals.max(axis=0)
        # among (numerically) tied maximizers prefer an interval endpoint
        tied = vals >= best - 1e-12 * np.maximum(1.0, np.abs(best))
        edge = (actions[:, None] == a_lo[None, :]) | (actions[:, None] == a_hi[None, :])
        score = tied * (1 + edge[:, None, :])
        arg = actions[np.argmax(score, axis=0)]
        policy[k], values[k] = arg, best
        bang[k] = (arg == a_lo[None, :]) | (arg == a_hi[None, :])
        nxt = best
    value = float(lattice.initial @ values[0][:, 0])
    return DPResult(value, policy, states, values, step, bang)


def fixed_leg(terms: ContractTerms, lattice: LatticeSpec) -> float:
    """``E[sum_k (S_k - K)]`` under the lattice measure."""
    return float(np.sum(lattice.expected_spots() - terms.strike))


def tiny_suite() -> list[tuple[ContractTerms, LatticeSpec]]:
    """Five small instances with grid-aligned constraints (integer bang-bang condition holds)."""
    cases = []
    cases.append((ContractTerms.uniform(3, 3 / 365, 0, 1, 1, 2, 20.0),
                  LatticeSpec.binomial(20.0, 1.15, 0.87, 3, volume_step=1.0)))
    cases.append((ContractTerms.uniform(4, 4 / 365, 0, 2, 4, 6, 20.0),
                  LatticeSpec.binomial(20.0, 1.1, 0.9, 4, volume_step=1.0)))
    cases.append((ContractTerms.uniform(5, 5 / 365, 0, 1, 2, 3, 19.0),
                  LatticeSpec.binomial(20.0, 1.12, 0.88, 5, volume_step=1.0)))
    cases.append((ContractTerms.uniform(5, 5 / 365, 0, 3, 6, 12, 20.5),
                  LatticeSpec.binomial(20.0, 1.2, 0.85, 5, volume_step=1.0)))
    cases.append((ContractTerms.uniform(4, 4 / 365, 0, 1, 0, 2, 20.0),
                  LatticeSpec.binomial(20.0, 1.25, 0.8, 4, volume_step=1.0)))
    return cases


def visited_states(result: DPResult, lattice: LatticeSpec) -> list[np.ndarray]:
    """Boolean masks ``[k][node, state]`` of the states reached with positive probability
    when following the optimal policy from zero volume."""
    masks = []
    reach = np.zeros((lattice.values[0].size, result.states[0].size), dtype=bool)
    reach[lattice.initial > 0, 0] = True
    for k in range(len(result.policy)):
        masks.append(reach)
        if k + 1 == len(result.policy):
            break
        nxt = np.zeros((lattice.values[k + 1].size, result.states[k + 1].size), dtype=bool)
        base = result.states[k + 1][0]
        for node, j in zip(*np.nonzero(reach)):
            target = result.states[k][j] + result.policy[k][node, j] - base
            nxt[lattice.transitions[k][node] > 0, target] = True
        reach = nxt
    return masks


# ----------------------------------------------------------------------------- one-factor quadrature


def effective_one_factor(model):
    """``(mean_reversion, vol)`` of a model whose log-spot is a single OU factor.

    A multi-factor model with a common mean reversion collapses to one factor
    with variance ``sum_ij rho_ij vol_i vol_j``; other models raise ConfigError.
    """
    if getattr(model, "kind", None) == "one_factor":
        return float(model.mean_reversion), float(model.vol)
    lam = np.asarray(getattr(model, "mean_reversions", []), dtype=float)
    if lam.size and np.allclose(lam, lam[0]):
        vols = np.asarray(model.vols, dtype=float)
        return float(lam[0]), float(np.sqrt(vols @ model.correlation @ vols))
    raise ConfigError("quadrature oracle needs a single effective OU factor")


def ou_dp_value(terms: ContractTerms, model, volume_step: float = 1.0, nodes: int = 1201,
                width: float = 7.0) -> float:
    """Optimal expected reward by backward induction on a Gaussian grid for the OU factor.

    The factor ``Y = vol * X`` at each date lives on ``nodes`` equally spaced
    points spanning ``+-width`` standard deviations; transition probabilities
    are exact normal masses of the cells around each point. Volumes move on the
    ``volume_step`` grid, which is exact when all bounds are multiples of it.
    """
    from scipy.special import ndtr

    lam, vol = effective_one_factor(model)
    times = terms.exercise_times
    if times[0] < 0:
        raise ConfigError("exercise dates must not precede valuation")
    qlo = _on_grid(terms.local_min, volume_step, "q_min")
    qhi = _on_grid(terms.local_max, volume_step, "q_max")
    gmin = int(_on_grid(terms.Q_min, volume_step, "Q_min"))
    gmax = int(_on_grid(terms.Q_max, volume_step, "Q_max"))
    var = vol**2 * -np.expm1(-2 * lam * times) / (2 * lam)
    grids = [np.zeros(1) if v == 0 else np.linspace(-width, width, nodes) * np.sqrt(v) for v in var]
    fwd = model.forward_curve(terms)

    def transition(y, y_next, dt):
        decay = np.exp(-lam * dt)
        sd = vol * np.sqrt(-np.expm1(-2 * lam * dt) / (2 * lam))
        edges = np.concatenate(([-np.inf], 0.5 * (y_next[1:] + y_next[:-1]), [np.inf]))
        return np.diff(ndtr((edges[None, :] - decay * y[:, None]) / sd), axis=1)

    volumes = np.arange(gmax + 1)
    blocked = -1e300
    value = np.where(volumes >= gmin, 0.0, blocked)[None, :]
    for k in range(terms.n - 1, -1, -1):
        y = grids[k]
        payoff = fwd[k] * np.exp(y - 0.5 * var[k]) - terms.strike
        if k + 1 < terms.n:
            cont = transition(y, grids[k + 1], times[k + 1] - times[k]) @ value
        else:
            cont = np.broadcast_to(value, (y.size, volumes.size))
        best = np.full((y.size, volumes.size), blocked)
        for a in range(int(qlo[k]), int(qhi[k]) + 1):
            cand = np.full_like(best, blocked)
            cand[:, : volumes.size - a] = a * volume_step * payoff[:, None] + cont[:, a:]
            best = np.maximum(best, cand)
        value = np.where(best <= blocked / 2, blocked, best)
    if times[0] > 0:
        return float((transition(np.zeros(1), grids[0], times[0]) @ value[:, 0])[0])
    return float(value[0, 0])
