"""Constant-step parameter updates on flat parameter vectors.

* ``sgd``   : plain stochastic gradient descent.
* ``adam``  : first/second moment averages with bias correction.
* ``psgld`` : RMSprop-style diagonal preconditioner plus preconditioned Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .exceptions import ConfigError, NumericError


def _check_grad(grad, params):
    grad = np.asarray(grad, dtype=float)
    if grad.shape != np.shape(params):
        raise ConfigError(f"gradient shape {grad.shape} != parameter shape {np.shape(params)}")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient; step rejected")
    return grad


def sgd_step(params, grad, lr):
    """``theta - lr * grad``."""
    grad = _check_grad(grad, params)
    return np.asarray(params, dtype=float) - lr * grad


@dataclass
class SGDState:
    lr: float = 0.1
    step_count: int = 0

    def step(self, params, grad):
        self.step_count += 1
        return sgd_step(params, grad, self.lr)


@dataclass
class AdamState:
    """Moment averages and hyper-parameters of Adam.

    With ``strict_index=True`` the bias correction is applied to the averages of
    the *previous* step, a variant kept only for side-by-side comparison.
    """

    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-10
    strict_index: bool = False
    bias_correction: bool = True
    m: np.ndarray | None = None
    ms: np.ndarray | None = None
    step_count: int = 0

    def step(self, params, grad):
        return adam_step(self, params, grad)


def adam_step(state: AdamState, params, grad):
    """One Adam update; mutates ``state`` and returns the new parameters."""
    grad = _check_grad(grad, params)
    if state.m is None:
        state.m = np.zeros_like(grad)
        state.ms = np.zeros_like(grad)
    m_prev, ms_prev = state.m, state.ms
    state.m = state.beta1 * m_prev + (1 - state.beta1) * grad
    state.ms = state.beta2 * ms_prev + (1 - state.beta2) * grad * grad
    n = state.step_count
    if state.strict_index:
        m_src, ms_src = m_prev, ms_prev
    else:
        m_src, ms_src = state.m, state.ms
    if state.bias_correction:
        m_hat = m_src / (1 - state.beta1 ** (n + 1))
        ms_hat = ms_src / (1 - state.beta2 ** (n + 1))
    else:
        m_hat, ms_hat = m_src, ms_src
    state.step_count = n + 1
    return np.asarray(params, dtype=float) - state.lr * m_hat / (state.eps + np.sqrt(ms_hat))


@dataclass
class PSGLDState:
    """Second-moment average and noise stream of the preconditioned Langevin update."""

    lr: float = 0.1
    beta: float = 0.8
    noise: float = 1e-6
    eps: float = 1e-10
    seed: tuple = (0,)
    ms: np.ndarray | None = None
    step_count: int = 0
    _gen: np.random.Generator | None = field(default=None, repr=False)

    def step(self, params, grad):
        return psgld_step(self, params, grad)

    def generator(self) -> np.random.Generator:
        if self._gen is None:
            self._gen = rng.generator((*rng.as_entropy(self.seed), rng.NOISE_STREAM))
        return self._gen


def psgld_step(state: PSGLDState, params, grad):
    """``theta - lr P g + noise sqrt(lr) P xi`` with ``P = 1 / (eps + sqrt(MS))``."""
    grad = _check_grad(grad, params)
    if state.ms is None:
        state.ms = np.zeros_like(grad)
    state.ms = state.beta * state.ms + (1 - state.beta) * grad * grad
    precond = 1.0 / (state.eps + np.sqrt(state.ms))
    out = np.asarray(params, dtype=float) - state.lr * precond * grad
    if state.noise > 0:
        # P blows up where the moment average has decayed towards zero (dead
        # units), so the noise is dropped where the gradient is exactly zero and
        # clipped to the largest step the preconditioned gradient can take
        xi = state.generator().standard_normal(grad.shape)
        bound = state.lr / np.sqrt(1 - state.beta)
        kick = np.clip(state.noise * np.sqrt(state.lr) * precond * xi, -bound, bound)
        out = out + np.where(grad != 0, kick, 0.0)
    state.step_count += 1
    return out


def make_optimizer(name: str, seed=0, **hyper):
    """Optimizer state by name: ``sgd`` | ``adam`` | ``psgld``."""
    name = name.lower()
    classes = {"sgd": SGDState, "adam": AdamState, "psgld": PSGLDState}
    if name not in classes:
        raise ConfigError(f"unknown optimizer {name!r}; expected one of {sorted(classes)}")
    if name == "psgld":
        hyper.setdefault("seed", rng.as_entropy(seed))
    try:
        return classes[name](**hyper)
    except TypeError as exc:
        raise ConfigError(f"bad {name} hyper-parameters: {exc}") from exc
