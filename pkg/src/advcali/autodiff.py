"""Minimal reverse-mode differentiation over dense 2-D float64 arrays.

Every op is a method on :class:`Tape`; it computes the forward value and,
when any input is tracked, appends a record holding a vector-Jacobian
closure. :func:`backward` replays the records in reverse.

Only the ops needed by the calibration model, the group detector and
their losses are provided. Subgradient conventions: ``relu'(0) = 0``,
``|x|'(0) = 0`` and row-max routes its gradient to the lowest-index
maximum.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .exceptions import NumericError, ShapeError, TapeStateError

__all__ = ["Tensor", "Tape", "Gradients", "backward"]


def _as2d(value):
    a = np.array(value, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got {a.ndim}-D")
    return a


class Tensor:
    """A 2-D float64 value, optionally tracked for gradients.

    Leaves created with ``requires_grad=True`` are parameters. Identity (not
    value) is what keys a tensor in :class:`Gradients`.
    """

    __slots__ = ("value", "requires_grad", "name", "tape")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = _as2d(value)
        if not np.all(np.isfinite(self.value)):
            raise NumericError(f"non-finite value in tensor {name or ''}".rstrip())
        self.requires_grad = requires_grad
        self.name = name
        self.tape = None

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


class Gradients(dict):
    """Mapping from parameter tensors to gradient arrays of the same shape."""


def _t(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


class Tape:
    """Ordered record of executed ops; confined to one thread."""

    def __init__(self):
        self.records = []

    def _record(self, op, value, inputs, vjp):
        if not np.all(np.isfinite(value)):
            raise NumericError(f"{op} produced a non-finite value")
        out = Tensor.__new__(Tensor)
        out.value = value
        out.name = None
        out.tape = self
        out.requires_grad = any(x.requires_grad for x in inputs)
        if out.requires_grad:
            self.records.append((out, inputs, vjp))
        return out

    def owns(self, t):
        return t.tape is self

    # -- linear algebra -----------------------------------------------------

    def matmul(self, a, b):
        a, b = _t(a), _t(b)
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
        av, bv = a.value, b.value
        return self._record("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))

    def spmm(self, adj, x):
        """Sparse-dense product against a (constant) Graph or normalised adjacency."""
        x = _t(x)
        m = adj.to_csr()
        if m.shape[1] != x.shape[0]:
            raise ShapeError(f"spmm: {m.shape} @ {x.shape}")
        mt = m.T.tocsr()
        return self._record("spmm", np.asarray(m @ x.value), (x,), lambda g: (np.asarray(mt @ g),))

    # -- elementwise --------------------------------------------------------

    def add(self, a, b):
        a, b = _t(a), _t(b)
        _same_shape("add", a, b)
        return self._record("add", a.value + b.value, (a, b), lambda g: (g, g))

    def sub(self, a, b):
        a, b = _t(a), _t(b)
        _same_shape("sub", a, b)
        return self._record("sub", a.value - b.value, (a, b), lambda g: (g, -g))

    def mul(self, a, b):
        a, b = _t(a), _t(b)
        _same_shape("mul", a, b)
        av, bv = a.value, b.value
        return self._record("mul", av * bv, (a, b), lambda g: (g * bv, g * av))

    def div(self, a, b):
        a, b = _t(a), _t(b)
        _same_shape("div", a, b)
        av, bv = a.value, b.value
        if np.any(bv == 0):
            raise NumericError("div: zero denominator")
        return self._record("div", av / bv, (a, b), lambda g: (g / bv, -g * av / (bv * bv)))

    def add_row(self, x, b):
        """``x + b`` with ``b`` a 1 x C row broadcast over the rows of ``x``."""
        x, b = _t(x), _t(b)
        if b.shape != (1, x.shape[1]):
            raise ShapeError(f"add_row: bias {b.shape} for input {x.shape}")
        return self._record("add_row", x.value + b.value, (x, b),
                            lambda g: (g, g.sum(axis=0, keepdims=True)))

    def div_rows(self, x, t):
        """Divide row ``i`` of ``x`` by the positive scalar ``t[i]``."""
        x, t = _t(x), _t(t)
        if t.shape != (x.shape[0], 1):
            raise ShapeError(f"div_rows: divisor {t.shape} for input {x.shape}")
        xv, tv = x.value, t.value
        if np.any(tv <= 0):
            raise NumericError("div_rows: divisor must be positive")
        out = xv / tv

        def vjp(g):
            return g / tv, -(g * xv).sum(axis=1, keepdims=True) / (tv * tv)

        return self._record("div_rows", out, (x, t), vjp)

    def relu(self, x):
        x = _t(x)
        on = x.value > 0
        return self._record("relu", np.where(on, x.value, 0.0), (x,), lambda g: (g * on,))

    def softplus(self, x):
        x = _t(x)
        xv = x.value
        return self._record("softplus", np.logaddexp(0.0, xv), (x,), lambda g: (g * expit(xv),))

    def log(self, x, floor=1e-12):
        """Natural log with inputs clamped from below at ``floor``."""
        x = _t(x)
        xv = np.maximum(x.value, floor)
        live = x.value > floor
        return self._record("log", np.log(xv), (x,), lambda g: (np.where(live, g / xv, 0.0),))

    def square(self, x):
        x = _t(x)
        xv = x.value
        return self._record("square", xv * xv, (x,), lambda g: (2.0 * xv * g,))

    def abs(self, x):
        x = _t(x)
        xv = x.value
        return self._record("abs", np.abs(xv), (x,), lambda g: (np.sign(xv) * g,))

    def affine(self, x, scale=1.0, shift=0.0):
        """``scale * x + shift`` with constant (broadcastable) scale and shift."""
        x = _t(x)
        scale = np.asarray(scale, dtype=np.float64)
        shift = np.asarray(shift, dtype=np.float64)
        out = scale * x.value + shift
        if out.shape != x.shape:
            raise ShapeError(f"affine: constants change the shape {x.shape} -> {out.shape}")
        return self._record("affine", out, (x,), lambda g: (g * scale,))

    # -- row-wise -----------------------------------------------------------

    def softmax(self, x):
        x = _t(x)
        e = np.exp(x.value - x.value.max(axis=1, keepdims=True))
        p = e / e.sum(axis=1, keepdims=True)

        def vjp(g):
            return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

        return self._record("softmax", p, (x,), vjp)

    def rowmax(self, x):
        """Per-row maximum as an N x 1 tensor, plus the argmax indices."""
        x = _t(x)
        idx = np.argmax(x.value, axis=1)
        rows = np.arange(x.shape[0])
        shape = x.shape

        def vjp(g):
            gx = np.zeros(shape)
            gx[rows, idx] = g[:, 0]
            return (gx,)

        out = self._record("rowmax", x.value[rows, idx].reshape(-1, 1), (x,), vjp)
        return out, idx

    # -- reductions ---------------------------------------------------------

    def wsum(self, x, weights=None, axis=None):
        """Weighted sum with constant weights.

        ``axis=None`` gives the 1 x 1 total of ``weights * x``; ``axis=0``
        gives the 1 x C row ``sum_i weights[i] * x[i, :]`` for an N-vector of
        weights.
        """
        x = _t(x)
        if axis is None:
            w = np.ones(x.shape) if weights is None else np.broadcast_to(
                np.asarray(weights, dtype=np.float64), x.shape)
            out = np.array([[np.sum(w * x.value)]])
            return self._record("wsum", out, (x,), lambda g: (g[0, 0] * w,))
        if axis != 0:
            raise ValueError("wsum supports axis=None or axis=0")
        w = np.ones(x.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
        if w.size != x.shape[0]:
            raise ShapeError(f"wsum: {w.size} weights for {x.shape[0]} rows")
        out = (w @ x.value).reshape(1, -1)
        return self._record("wsum", out, (x,), lambda g: (np.outer(w, g[0]),))


def backward(tape, loss, params=()):
    """Reverse accumulation of ``d loss / d p`` for each tracked parameter.

    ``params`` lists parameters whose gradient must be reported even when
    they do not influence ``loss`` (they map to zeros).
    """
    if not isinstance(loss, Tensor):
        raise TypeError("loss must be a Tensor")
    if loss.shape != (1, 1):
        raise ShapeError(f"loss must be 1x1, got {loss.shape}")
    if not tape.owns(loss):
        raise TapeStateError("loss was not produced on this tape; run the forward pass first")
    grads = {id(loss): np.ones((1, 1))}
    leaves = {}
    for out, inputs, vjp in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for x, gx in zip(inputs, vjp(g)):
            if not x.requires_grad or gx is None:
                continue
            if tape.owns(x):
                prev = grads.get(id(x))
                grads[id(x)] = gx if prev is None else prev + gx
            else:
                leaves.setdefault(id(x), [x, np.zeros(x.shape)])[1] += gx
    result = Gradients()
    for p in params:
        result[p] = np.zeros(p.shape)
    for x, gx in leaves.values():
        result[x] = gx
    return result
