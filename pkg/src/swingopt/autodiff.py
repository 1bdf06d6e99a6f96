"""Minimal reverse-mode automatic differentiation over numpy batch arrays.

Every node holds a whole mini-batch (a vector over paths, or a small parameter
block), so the tape length scales with the number of exercise dates and not with
the number of paths. The module-level functions accept plain arrays too: with no
:class:`Var` argument they fall through to numpy, which lets the strategy code
run unchanged for gradient-free evaluation.
"""

from __future__ import annotations

import numpy as np

from .exceptions import NumericError, UsageError


class Tape:
    """Append-only record of primitive operations.

    Node ``i`` stores its value, its parent node ids and a vector-Jacobian
    closure mapping the adjoint of the output to adjoints of the parents.
    Append order is a topological order, so the reverse sweep is a single pass.
    """

    def __init__(self, track_kinks: bool = False):
        self.track_kinks = track_kinks
        self.clear()

    def clear(self):
        self.values: list[np.ndarray] = []
        self.parents: list[tuple[int, ...]] = []
        self.vjps: list = []
        self.names: list[str] = []
        self.kinks: list[np.ndarray] = []
        self.kink_margin = np.inf
        self.leaves: list[int] = []
        self.output: int | None = None

    def __len__(self):
        return len(self.values)

    def _push(self, value, parents, vjp, name) -> "Var":
        self.values.append(value)
        self.parents.append(parents)
        self.vjps.append(vjp)
        self.names.append(name)
        return Var(self, len(self.values) - 1)

    def param(self, value) -> "Var":
        """Register a differentiable leaf (a copy of ``value``)."""
        v = self._push(np.array(value, dtype=float), (), None, "param")
        self.leaves.append(v.index)
        return v

    def _record_kink(self, gap, mask):
        if not self.track_kinks:
            return
        gap = np.abs(gap)
        if gap.size:
            self.kink_margin = min(self.kink_margin, float(gap.min()))
        self.kinks.append(np.packbits(np.asarray(mask, dtype=bool).ravel()))

    def kink_signature(self) -> bytes:
        """Branch pattern of every parameter-dependent max/min/relu node."""
        return b"|".join(k.tobytes() for k in self.kinks)

    def check_finite(self, var: "Var"):
        """Raise :class:`NumericError` at the first non-finite node feeding ``var``."""
        if np.all(np.isfinite(var.value)):
            return
        for i in range(var.index + 1):
            if not np.all(np.isfinite(self.values[i])):
                raise NumericError(f"non-finite value at tape node {i} ({self.names[i]})", node=i)
        raise NumericError("non-finite value", node=var.index)

    def backward(self, output: "Var", wrt=None) -> list[np.ndarray]:
        """Gradients of the scalar ``output`` with respect to ``wrt`` (default: all leaves)."""
        if output is None or output.tape is not self or output.index >= len(self.values):
            raise UsageError("backward called before a forward pass was recorded on this tape")
        if np.ndim(output.value) != 0:
            raise UsageError("backward needs a scalar output")
        self.output = output.index
        adj: list = [None] * (output.index + 1)
        adj[output.index] = np.ones(())
        for i in range(output.index, -1, -1):
            g = adj[i]
            if g is None or self.vjps[i] is None:
                continue
            for p, gp in zip(self.parents[i], self.vjps[i](g)):
                if gp is None:
                    continue
                adj[p] = gp if adj[p] is None else adj[p] + gp
        targets = self.leaves if wrt is None else [w.index for w in wrt]
        return [np.zeros_like(self.values[t]) if t >= len(adj) or adj[t] is None
                else np.broadcast_to(adj[t], self.values[t].shape).astype(float) for t in targets]


class Var:
    """Handle to a tape node."""

    __slots__ = ("tape", "index")
    __array_priority__ = 100

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(node={self.index}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, key):
        return getitem(self, key)


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is not None and a.tape is not tape:
                raise UsageError("operands recorded on different tapes")
            tape = a.tape
    return tape


def _val(a):
    return a.value if isinstance(a, Var) else a


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if np.shape(g) == shape:
        return g
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(a, b, value, da, db, name):
    """Record a binary op; ``da``/``db`` map the output adjoint to each input's."""
    tape = _tape_of(a, b)
    if tape is None:
        return value
    parents, fns = [], []
    for x, d in ((a, da), (b, db)):
        if isinstance(x, Var):
            parents.append(x.index)
            fns.append((d, x.shape))

    def vjp(g):
        return [_unbroadcast(d(g), shp) for d, shp in fns]

    return tape._push(value, tuple(parents), vjp, name)


def add(a, b):
    return _binary(a, b, _val(a) + _val(b), lambda g: g, lambda g: g, "add")


def sub(a, b):
    return _binary(a, b, _val(a) - _val(b), lambda g: g, lambda g: -g, "sub")


def mul(a, b):
    va, vb = _val(a), _val(b)
    return _binary(a, b, va * vb, lambda g: g * vb, lambda g: g * va, "mul")


def div(a, b):
    va, vb = _val(a), _val(b)
    out = va / vb
    return _binary(a, b, out, lambda g: g / vb, lambda g: -g * out / vb, "div")


def _unary(x, value, d, name):
    if not isinstance(x, Var):
        return value
    return x.tape._push(value, (x.index,), lambda g: (d(g),), name)


def exp(x):
    out = np.exp(_val(x))
    return _unary(x, out, lambda g: g * out, "exp")


def log(x):
    vx = _val(x)
    return _unary(x, np.log(vx), lambda g: g / vx, "log")


def logistic(x):
    """``1 / (1 + exp(-x))``, overflow-free."""
    vx = _val(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * vx))
    return _unary(x, out, lambda g: g * out * (1.0 - out), "logistic")


def relu(x):
    vx = _val(x)
    mask = vx > 0
    out = np.maximum(vx, 0.0)
    if isinstance(x, Var):
        x.tape._record_kink(vx, mask)
    return _unary(x, out, lambda g: g * mask, "relu")


def maximum(a, b):
    """Elementwise max; ties send the adjoint to ``a``."""
    va, vb = _val(a), _val(b)
    first = va >= vb
    out = np.where(first, va, vb)
    tape = _tape_of(a, b)
    if tape is not None:
        tape._record_kink(va - vb, first)
    return _binary(a, b, out, lambda g: g * first, lambda g: g * ~first, "maximum")


def minimum(a, b):
    """Elementwise min; ties send the adjoint to ``a``."""
    va, vb = _val(a), _val(b)
    first = va <= vb
    out = np.where(first, va, vb)
    tape = _tape_of(a, b)
    if tape is not None:
        tape._record_kink(va - vb, first)
    return _binary(a, b, out, lambda g: g * first, lambda g: g * ~first, "minimum")


def where(cond, a, b):
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is a constant mask."""
    cond = np.asarray(cond, dtype=bool)
    return _binary(a, b, np.where(cond, _val(a), _val(b)),
                   lambda g: g * cond, lambda g: g * ~cond, "where")


def getitem(x, key):
    vx = _val(x)
    out = vx[key]
    if not isinstance(x, Var):
        return out

    def d(g):
        full = np.zeros_like(vx)
        np.add.at(full, key, g)
        return full

    return x.tape._push(out, (x.index,), lambda g: (d(g),), "getitem")


def _dense_parents(x, weight, bias, vx, vw):
    parents, fns = [], []
    if isinstance(x, Var):
        parents.append(x.index)
        fns.append(lambda g: vw.T @ g)
    if isinstance(weight, Var):
        parents.append(weight.index)
        fns.append(lambda g: g @ vx.T)
    if isinstance(bias, Var):
        parents.append(bias.index)
        fns.append(lambda g: g.sum(axis=1))
    return tuple(parents), fns


def affine(x, weight, bias):
    """Dense layer ``weight @ x + bias`` on a feature-major batch ``x`` of shape ``(d_in, M)``.

    Feature-major keeps every row contiguous over paths, which is markedly faster
    than path-major for the thin matrices involved here.
    """
    vx, vw, vb = _val(x), _val(weight), _val(bias)
    out = vw @ vx
    out += vb[:, None]
    tape = _tape_of(x, weight, bias)
    if tape is None:
        return out
    parents, fns = _dense_parents(x, weight, bias, vx, vw)
    return tape._push(out, parents, lambda g: [f(g) for f in fns], "affine")


def dense_relu(x, weight, bias):
    """``relu(weight @ x + bias)`` as a single node."""
    vx, vw, vb = _val(x), _val(weight), _val(bias)
    out = vw @ vx
    out += vb[:, None]
    tape = _tape_of(x, weight, bias)
    if tape is not None and tape.track_kinks:
        tape._record_kink(out.copy(), out > 0)
    mask = out > 0
    np.maximum(out, 0.0, out=out)
    if tape is None:
        return out
    parents, fns = _dense_parents(x, weight, bias, vx, vw)

    def vjp(g):
        gz = g * mask
        return [f(gz) for f in fns]

    return tape._push(out, parents, vjp, "dense_relu")


def coldot(a, b):
    """Column-wise inner product of two ``(k, M)`` arrays."""
    va, vb = _val(a), _val(b)
    return _binary(a, b, np.einsum("ij,ij->j", va, vb),
                   lambda g: g * vb, lambda g: g * va, "coldot")


def stack_rows(rows):
    """Stack ``k`` length-``M`` vectors (scalars broadcast) into a ``(k, M)`` matrix."""
    vals = [_val(r) for r in rows]
    M = max(np.size(v) for v in vals)
    out = np.empty((len(rows), M))
    for j, v in enumerate(vals):
        out[j] = v
    tape = _tape_of(*rows)
    if tape is None:
        return out
    idx = [(j, r) for j, r in enumerate(rows) if isinstance(r, Var)]
    return tape._push(out, tuple(r.index for _, r in idx),
                      lambda g: [_unbroadcast(g[j], r.shape) for j, r in idx], "stack")


def total(x):
    vx = _val(x)
    out = np.sum(vx)
    return _unary(x, out, lambda g: np.broadcast_to(g, np.shape(vx)), "sum")


def mean(x):
    vx = _val(x)
    n = np.size(vx)
    out = np.mean(vx)
    return _unary(x, out, lambda g: np.broadcast_to(g / n, np.shape(vx)), "mean")
