"""Parametric purchase rules and the cumulative-volume recursion.

A rule produces a score ``chi_k`` at each date; the purchase is the admissible
interval mapped through the logistic function (``smooth``) or its hard
threshold ``1{chi >= 0}`` (``bang_bang``). Both rules are written against the
:mod:`autodiff` functions, so the same code records a gradient tape when given
tape variables and runs as plain numpy otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .contract import ContractTerms, VolumeCorridor, build_corridor
from .exceptions import ConfigError, UsageError
from .models import PathBatch

MODES = ("smooth", "bang_bang")
INPUT_SPECS = ("basic", "state")


def eta(terms: ContractTerms, Q):
    """Normalized position of ``Q`` inside ``[Q_min, Q_max]``."""
    span = terms.Q_max - terms.Q_min
    if span == 0:
        if terms.Q_min == 0:
            raise ConfigError("capacity normalization undefined for Q_min = Q_max = 0")
        span = terms.Q_min
    return (Q - terms.Q_min) * (1.0 / span)


@dataclass(eq=False)
class PVParams:
    """One affine coefficient row ``(payoff, capacity, constant)`` per exercise date."""

    theta: np.ndarray

    kind = "pv"

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float)
        if self.theta.ndim != 2 or self.theta.shape[1] != 3:
            raise ConfigError("PV coefficients must be an n x 3 matrix")
        if not np.all(np.isfinite(self.theta)):
            raise ConfigError("PV coefficients must be finite")

    @classmethod
    def initial(cls, n: int, row=(1.0, -1.0, 0.0)) -> "PVParams":
        return cls(np.tile(np.asarray(row, dtype=float), (n, 1)))

    @property
    def n_dates(self) -> int:
        return self.theta.shape[0]

    @property
    def n_params(self) -> int:
        return self.theta.size

    def flat(self) -> np.ndarray:
        return self.theta.ravel().copy()

    def with_flat(self, vec) -> "PVParams":
        return PVParams(np.asarray(vec, dtype=float).reshape(self.theta.shape))

    def blocks(self) -> list[np.ndarray]:
        return [self.theta]

    def check(self, terms: ContractTerms, state_dim: int | None = None):
        if self.n_dates != terms.n:
            raise ConfigError(f"PV coefficients have {self.n_dates} rows for {terms.n} exercise dates")


@dataclass(eq=False)
class NNParams:
    """Feed-forward network with ReLU hidden layers and a linear 3-unit output.

    ``input_spec="basic"`` feeds ``(t/T, S-K, eta)``; ``"state"`` appends the
    model state vector at that date.
    """

    weights: list
    biases: list
    input_spec: str = "basic"

    kind = "nn"

    def __post_init__(self):
        self.weights = [np.array(w, dtype=float) for w in self.weights]
        self.biases = [np.array(b, dtype=float) for b in self.biases]
        if self.input_spec not in INPUT_SPECS:
            raise ConfigError(f"input_spec must be one of {INPUT_SPECS}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("need matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ConfigError(f"layer {i} input size {w.shape[1]} != previous output {self.weights[i - 1].shape[0]}")
        if self.weights[-1].shape[0] != 3:
            raise ConfigError("network output must have 3 units")

    @classmethod
    def initial(cls, hidden=(10, 10), input_spec="basic", state_dim=0, seed=0,
                output_bias=(1.0, -1.0, 0.0)) -> "NNParams":
        """Uniform(+-1/sqrt(fan_in)) weights, zero hidden biases."""
        d_in = 3 + (state_dim if input_spec == "state" else 0)
        sizes = [d_in, *hidden, 3]
        gen = np.random.default_rng(seed)
        weights, biases = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(a)
            weights.append(gen.uniform(-bound, bound, size=(b, a)))
            biases.append(np.zeros(b))
        biases[-1] = np.asarray(output_bias, dtype=float).copy()
        return cls(weights, biases, input_spec)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def blocks(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.blocks()])

    def with_flat(self, vec) -> "NNParams":
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.n_params:
            raise ConfigError(f"expected {self.n_params} values, got {vec.size}")
        parts, pos = [], 0
        for a in self.blocks():
            parts.append(vec[pos:pos + a.size].reshape(a.shape))
            pos += a.size
        return NNParams(parts[0::2], parts[1::2], self.input_spec)

    def check(self, terms: ContractTerms, state_dim: int | None = None):
        extra = self.input_dim - 3
        if self.input_spec == "basic" and extra != 0:
            raise ConfigError(f"basic input expects 3 features, network takes {self.input_dim}")
        if self.input_spec == "state" and state_dim is not None and extra != state_dim:
            raise ConfigError(f"network expects {extra} state variables, model provides {state_dim}")


StrategyParams = PVParams | NNParams


def save_params(params: StrategyParams, path, contract_n: int | None = None):
    """Write the portable JSON form ``{strategy_kind, contract_n, shapes, values}``."""
    blocks = params.blocks()
    doc = {
        "strategy_kind": params.kind,
        "contract_n": int(contract_n if contract_n is not None else getattr(params, "n_dates", 0)),
        "shapes": [list(a.shape) for a in blocks],
        "values": [a.ravel().tolist() for a in blocks],
    }
    if params.kind == "nn":
        doc["input_spec"] = params.input_spec
    Path(path).write_text(json.dumps(doc))
    return doc


def params_from_dict(doc: dict) -> StrategyParams:
    try:
        arrays = [np.asarray(v, dtype=float).reshape(s) for s, v in zip(doc["shapes"], doc["values"])]
        kind = doc["strategy_kind"]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed parameter file: {exc}") from exc
    if kind == "pv":
        return PVParams(arrays[0])
    if kind == "nn":
        return NNParams(arrays[0::2], arrays[1::2], doc.get("input_spec", "basic"))
    raise ConfigError(f"unknown strategy_kind {kind!r}")


def load_params(path) -> StrategyParams:
    return params_from_dict(json.loads(Path(path).read_text()))


@dataclass
class DecisionContext:
    """Information available at date ``k``: spot, cumulative volume, model state."""

    k: int
    S: np.ndarray
    Q: np.ndarray
    state: np.ndarray | None = None


class _PVView:
    """Per-date coefficient access, either numeric rows or tape leaves."""

    def __init__(self, theta, tape=None):
        self.tape = tape
        if tape is None:
            self.rows = theta
        else:
            self.leaf = tape.param(theta)
            self.rows = [ad.getitem(self.leaf, k) for k in range(theta.shape[0])]
        self.leaves = [self.leaf] if tape is not None else []

    def score(self, terms, k, payoff, Q, state):
        row = self.rows[k]
        return ad.add(ad.add(ad.mul(ad.getitem(row, 0), payoff), ad.mul(ad.getitem(row, 1), eta(terms, Q))),
                      ad.getitem(row, 2))


class _NNView:
    def __init__(self, params: NNParams, tape=None):
        self.spec = params.input_spec
        blocks = params.blocks()
        self.leaves = [tape.param(a) for a in blocks] if tape is not None else []
        vals = self.leaves or blocks
        self.layers = list(zip(vals[0::2], vals[1::2]))

    def score(self, terms, k, payoff, Q, state):
        e = eta(terms, Q)
        rows = [terms.exercise_times[k] / terms.maturity, payoff, e]
        if self.spec == "state":
            rows += [state[:, j] for j in range(state.shape[1])]
        h = ad.stack_rows(rows)
        for w, b in self.layers[:-1]:
            h = ad.dense_relu(h, w, b)
        out = ad.affine(h, *self.layers[-1])
        return ad.coldot(out, ad.stack_rows([payoff, e, 1.0]))


def _view(params, tape=None):
    if isinstance(params, PVParams):
        return _PVView(params.theta, tape)
    if isinstance(params, NNParams):
        return _NNView(params, tape)
    raise ConfigError(f"unsupported parameter type {type(params).__name__}")


def chi_pv(params: PVParams, ctx: DecisionContext, terms: ContractTerms):
    """``theta_k1 (S-K) + theta_k2 eta(Q) + theta_k3``."""
    return _PVView(params.theta).score(terms, ctx.k, np.asarray(ctx.S, float) - terms.strike, ctx.Q, ctx.state)


def chi_nn(params: NNParams, ctx: DecisionContext, terms: ContractTerms):
    """Inner product of the network output with ``(S-K, eta(Q), 1)``."""
    S = np.atleast_1d(np.asarray(ctx.S, dtype=float))
    Q = np.broadcast_to(np.asarray(ctx.Q, dtype=float), S.shape)
    state = None
    if params.input_spec == "state":
        if ctx.state is None:
            raise ConfigError("state-augmented network needs the model state")
        state = np.atleast_2d(np.asarray(ctx.state, dtype=float))
        if state.shape[1] != params.input_dim - 3:
            raise ConfigError(f"network expects {params.input_dim - 3} state variables, got {state.shape[1]}")
    out = _NNView(params).score(terms, ctx.k, S - terms.strike, Q, state)
    return out if np.ndim(ctx.S) else float(out[0])


def _step(terms, corridor, k, Q, chi, mode):
    """Purchase at date ``k`` from cumulative ``Q`` given score ``chi``; returns ``(q, Q_next)``."""
    lo = ad.maximum(corridor.q_down[k + 1], ad.add(Q, terms.local_min[k]))
    hi = ad.minimum(corridor.q_up[k + 1], ad.add(Q, terms.local_max[k]))
    if mode == "smooth":
        Q_next = ad.add(lo, ad.mul(ad.sub(hi, lo), ad.logistic(chi)))
    elif mode == "bang_bang":
        Q_next = ad.where(ad._val(chi) >= 0, hi, lo)
    else:
        raise ConfigError(f"mode must be one of {MODES}")
    return ad.sub(Q_next, Q), Q_next


def purchase(terms, corridor, params, ctx: DecisionContext, mode="smooth"):
    """Volume bought at ``ctx.k`` and the updated cumulative volume."""
    S = np.asarray(ctx.S, dtype=float)
    state = None if ctx.state is None else np.atleast_2d(ctx.state)
    chi = _view(params).score(terms, ctx.k, np.atleast_1d(S) - terms.strike,
                              np.broadcast_to(ctx.Q, np.atleast_1d(S).shape), state)
    q, Q_next = _step(terms, corridor, ctx.k, np.asarray(ctx.Q, dtype=float), chi, mode)
    if np.ndim(S) == 0:
        return float(np.ravel(q)[0]), float(np.ravel(Q_next)[0])
    return q, Q_next


@dataclass
class RollResult:
    volumes: np.ndarray  # (M, n)
    rewards: np.ndarray  # (M,)
    final_volume: np.ndarray  # (M,)


def _check_batch(terms, batch: PathBatch):
    if batch.n_dates != terms.n:
        raise ConfigError(f"path batch has {batch.n_dates} dates, contract has {terms.n}")


def _roll(terms, corridor, view, batch, mode, keep_volumes=True):
    M = batch.n_paths
    Q = np.zeros(M)
    reward = 0.0
    volumes = np.empty((M, terms.n)) if keep_volumes else None
    for k in range(terms.n):
        payoff = batch.spots[:, k] - terms.strike
        chi = view.score(terms, k, payoff, Q, batch.states[:, k, :])
        q, Q = _step(terms, corridor, k, Q, chi, mode)
        reward = ad.add(reward, ad.mul(q, payoff))
        if keep_volumes:
            volumes[:, k] = ad._val(q)
    return volumes, reward, Q


def roll_strategy(terms, corridor, params, batch: PathBatch, mode="smooth", keep_volumes=True) -> RollResult:
    """Apply the rule on every path from ``Q_0 = 0``; returns volumes and total rewards."""
    _check_batch(terms, batch)
    params.check(terms, batch.state_dim)
    corridor = corridor if corridor is not None else build_corridor(terms)
    volumes, reward, Q = _roll(terms, corridor, _view(params), batch, mode, keep_volumes)
    return RollResult(volumes, np.asarray(reward, dtype=float), Q)


@dataclass
class LossGrad:
    loss: float
    grad: np.ndarray  # flat, same layout as params.flat()
    tape: ad.Tape = field(repr=False, default=None)


def forward(tape: ad.Tape, params, terms, corridor, batch: PathBatch):
    """Record ``-mean_paths sum_k q_k (S_k - K)`` (smooth rule) on ``tape``."""
    _check_batch(terms, batch)
    params.check(terms, batch.state_dim)
    tape.clear()
    view = _view(params, tape)
    _, reward, _ = _roll(terms, corridor, view, batch, "smooth", keep_volumes=False)
    if not isinstance(reward, ad.Var):
        raise UsageError("loss does not depend on the parameters")
    loss = ad.mul(ad.mean(reward), -1.0)
    tape.check_finite(loss)
    return loss, view.leaves


def loss_and_grad(params, terms, corridor, batch: PathBatch, tape: ad.Tape | None = None) -> LossGrad:
    tape = tape if tape is not None else ad.Tape()
    loss, leaves = forward(tape, params, terms, corridor, batch)
    grads = tape.backward(loss, leaves)
    return LossGrad(float(loss.value), np.concatenate([g.ravel() for g in grads]), tape)


def initial_params(kind: str, terms: ContractTerms, hidden=(10, 10), input_spec="basic", state_dim=0, seed=0):
    if kind == "pv":
        return PVParams.initial(terms.n)
    if kind == "nn":
        return NNParams.initial(hidden, input_spec, state_dim, seed)
    raise ConfigError(f"strategy kind must be 'pv' or 'nn', got {kind!r}")
