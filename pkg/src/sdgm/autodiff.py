"""A small tape-based reverse-mode automatic differentiation engine over
numpy arrays.

Operations on :class:`Tensor` objects are recorded on the active
:class:`Tape` (see :func:`recording`) whenever one of their inputs requires a
gradient. :func:`backward` walks the tape in reverse and accumulates adjoints.
"""
from __future__ import annotations

import contextlib
from typing import Callable

import numpy as np

from .errors import ShapeMismatch

_TAPES: list["Tape"] = []

# Test hook: when not 1.0, the arccos adjoint is scaled by this factor so the
# gradient checks can be shown to catch a broken backward rule.
_ARCCOS_ADJOINT_FAULT = 1.0


class Node:
    __slots__ = ("out", "inputs", "vjps")

    def __init__(self, out, inputs, vjps):
        self.out = out
        self.inputs = inputs
        self.vjps = vjps


class Tape:
    """Ordered record of primitive operations; appended in execution order,
    which is already a topological order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)


@contextlib.contextmanager
def recording(tape: Tape | None = None):
    tape = Tape() if tape is None else tape
    _TAPES.append(tape)
    try:
        yield tape
    finally:
        _TAPES.pop()


@contextlib.contextmanager
def inject_adjoint_fault(factor: float = 1.01):
    global _ARCCOS_ADJOINT_FAULT
    old = _ARCCOS_ADJOINT_FAULT
    _ARCCOS_ADJOINT_FAULT = factor
    try:
        yield
    finally:
        _ARCCOS_ADJOINT_FAULT = old


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _lift(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs, vjps) -> "Tensor":
    needs = [t.requires_grad for t in inputs]
    out = Tensor(data, requires_grad=any(needs))
    if out.requires_grad and _TAPES:
        keep = [(t, f) for t, f, n in zip(inputs, vjps, needs) if n]
        _TAPES[-1].nodes.append(Node(out, [t for t, _ in keep], [f for _, f in keep]))
    return out


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    # arithmetic
    def __add__(self, other):
        o = _lift(other)
        a_shape, b_shape = self.shape, o.shape
        return _make(self.data + o.data, [self, o],
                     [lambda g: _unbroadcast(g, a_shape), lambda g: _unbroadcast(g, b_shape)])

    __radd__ = __add__

    def __neg__(self):
        return _make(-self.data, [self], [lambda g: -g])

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) + (-self)

    def __mul__(self, other):
        o = _lift(other)
        a, b = self.data, o.data
        return _make(a * b, [self, o],
                     [lambda g: _unbroadcast(g * b, a.shape), lambda g: _unbroadcast(g * a, b.shape)])

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = _lift(other)
        a, b = self.data, o.data
        return _make(a / b, [self, o],
                     [lambda g: _unbroadcast(g / b, a.shape),
                      lambda g: _unbroadcast(-g * a / (b * b), b.shape)])

    def __rtruediv__(self, other):
        return _lift(other) / self

    def __matmul__(self, other):
        o = _lift(other)
        a, b = self.data, o.data
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
        return _make(a @ b, [self, o], [lambda g: g @ b.T, lambda g: a.T @ g])

    # reductions and elementwise functions
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape).copy()

        return _make(self.data.sum(axis=axis, keepdims=keepdims), [self], [vjp])

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def sqrt(self):
        r = np.sqrt(self.data)
        return _make(r, [self], [lambda g: g * 0.5 / r])

    def arccos(self):
        x = self.data
        return _make(np.arccos(x), [self],
                     [lambda g: -_ARCCOS_ADJOINT_FAULT * g / np.sqrt(1.0 - x * x)])

    def clip(self, lo: float, hi: float):
        x = self.data
        inside = (x >= lo) & (x <= hi)
        return _make(np.clip(x, lo, hi), [self], [lambda g: g * inside])

    def take_rows(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        shape = self.shape

        def vjp(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return out

        return _make(self.data[idx], [self], [vjp])


def maximum(a, b) -> Tensor:
    """Elementwise max; the gradient goes to the larger branch and to ``a``
    on ties."""
    a, b = _lift(a), _lift(b)
    pick_a = a.data >= b.data
    return _make(np.maximum(a.data, b.data), [a, b],
                 [lambda g: _unbroadcast(g * pick_a, a.shape),
                  lambda g: _unbroadcast(g * ~pick_a, b.shape)])


def backward(loss: Tensor, tape: Tape, wrt=None) -> dict:
    """Reverse accumulation from a scalar ``loss``.

    Returns a dict mapping ``id(tensor)`` to its gradient for every tensor on
    the tape that requires one, or only for ``wrt`` when given. The tape is
    not consumed, so calling this twice gives identical results.
    """
    if loss.data.size != 1:
        raise ShapeMismatch(f"loss must be a scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.out))
        if g is None:
            continue
        for inp, vjp in zip(node.inputs, node.vjps):
            contrib = vjp(g)
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
    if wrt is None:
        return grads
    return {name: grads.get(id(t), np.zeros_like(t.data)) for name, t in wrt.items()}


def grad(f: Callable[[dict], Tensor], params: dict) -> tuple[float, dict]:
    """Value and gradient of ``f`` at ``params`` (a dict of arrays)."""
    leaves = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in params.items()}
    with recording() as tape:
        out = f(leaves)
    return out.item(), backward(out, tape, wrt=leaves)


def finite_diff_check(f: Callable[[dict], Tensor], params: dict, h: float = 1e-5,
                      max_entries: int | None = None, seed: int = 0) -> float:
    """Largest relative error between the tape gradient of ``f`` and central
    differences, taken per parameter array as ||g_a - g_n|| / max(||g_a||, ||g_n||).

    ``max_entries`` limits the number of coordinates perturbed per array
    (chosen at random from ``seed``); all of them are used by default.
    """
    _, analytic = grad(f, params)
    rng = np.random.default_rng(seed)
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    worst = 0.0
    for name, arr in base.items():
        flat = arr.reshape(-1)
        coords = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            coords = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(coords.size)
        for k, c in enumerate(coords):
            old = flat[c]
            flat[c] = old + h
            fp = f({n: Tensor(v) for n, v in base.items()}).item()
            flat[c] = old - h
            fm = f({n: Tensor(v) for n, v in base.items()}).item()
            flat[c] = old
            numeric[k] = (fp - fm) / (2.0 * h)
        a = analytic[name].reshape(-1)[coords]
        scale = max(np.linalg.norm(a), np.linalg.norm(numeric))
        if scale == 0.0:
            continue
        worst = max(worst, float(np.linalg.norm(a - numeric) / scale))
    return worst
