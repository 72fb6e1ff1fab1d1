"""Calibration networks and scalar/vector scaling baselines.

``GcnTemperatureScaler`` maps (normalised adjacency, logits) to one positive
temperature per node; ``GinGroupDetector`` maps temperature-scaled logits to
a soft assignment over K groups. Both hold their parameters as tracked
:class:`~advcali.autodiff.Tensor` leaves and build their forward pass on a
caller-supplied :class:`~advcali.autodiff.Tape`.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor, backward
from .exceptions import DomainError, ParseError, ShapeError
from .graph import read_matrix, write_matrix
from .rng import SplitMix64

__all__ = [
    "glorot_uniform",
    "init_params",
    "GcnTemperatureScaler",
    "GinGroupDetector",
    "scale_logits",
    "softmax",
    "ts_fit",
    "VectorScalingParams",
    "vs_fit",
    "save_checkpoint",
    "load_checkpoint",
]

DEFAULT_T_MIN = 1e-3


def glorot_uniform(stream, fan_in, fan_out):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return (2.0 * stream.uniform((fan_in, fan_out)) - 1.0) * bound


def init_params(seed, weights, biases=()):
    """Fresh parameters: Glorot-uniform weights and zero biases.

    ``weights`` is a sequence of ``(name, (fan_in, fan_out))`` and ``biases``
    of ``(name, size)``. Weights are drawn in the listed order from one
    splitmix64 stream seeded with ``seed``.
    """
    stream = SplitMix64(seed)
    params = {}
    for name, (fan_in, fan_out) in weights:
        if fan_in <= 0 or fan_out <= 0:
            raise ValueError(f"{name}: dimensions must be positive")
        params[name] = Tensor(glorot_uniform(stream, fan_in, fan_out), requires_grad=True, name=name)
    for name, size in biases:
        if size <= 0:
            raise ValueError(f"{name}: size must be positive")
        params[name] = Tensor(np.zeros((1, size)), requires_grad=True, name=name)
    return params


def _check_logits(z, num_classes):
    if z.ndim != 2 or z.shape[1] != num_classes:
        raise ShapeError(f"expected N x {num_classes} logits, got {z.shape}")


class GcnTemperatureScaler:
    """Two-layer GCN producing ``t = softplus(A relu(A Z W1 + b1) W2 + b2) + t_min``."""

    param_names = ("W1", "b1", "W2", "b2")

    def __init__(self, num_classes, hidden=16, t_min=DEFAULT_T_MIN, seed=0):
        if t_min <= 0:
            raise ValueError("t_min must be positive")
        self.num_classes = num_classes
        self.hidden = hidden
        self.t_min = t_min
        self.seed = seed
        self.params = init_params(
            seed,
            [("W1", (num_classes, hidden)), ("W2", (hidden, 1))],
            [("b1", hidden), ("b2", 1)],
        )

    def parameters(self):
        return [self.params[k] for k in self.param_names]

    def forward(self, tape, adj, z):
        z = z if isinstance(z, Tensor) else Tensor(z)
        _check_logits(z.value, self.num_classes)
        if adj.num_nodes != z.shape[0]:
            raise ShapeError(f"adjacency has {adj.num_nodes} nodes, logits {z.shape[0]} rows")
        p = self.params
        h = tape.relu(tape.add_row(tape.spmm(adj, tape.matmul(z, p["W1"])), p["b1"]))
        out = tape.add_row(tape.spmm(adj, tape.matmul(h, p["W2"])), p["b2"])
        return tape.affine(tape.softplus(out), 1.0, self.t_min)

    def temperatures(self, adj, z):
        return self.forward(Tape(), adj, z).value[:, 0].copy()


class GinGroupDetector:
    """Two sum-aggregation GIN layers (eps = 0) and a softmax projection to K groups."""

    param_names = ("W1a", "b1a", "W1b", "b1b", "W2a", "b2a", "W2b", "b2b", "W")

    def __init__(self, in_dim, n_groups, hidden=16, seed=0):
        self.in_dim = in_dim
        self.n_groups = n_groups
        self.hidden = hidden
        self.seed = seed
        d = hidden
        self.params = init_params(
            seed,
            [("W1a", (in_dim, d)), ("W1b", (d, d)), ("W2a", (d, d)), ("W2b", (d, d)),
             ("W", (d, n_groups))],
            [("b1a", d), ("b1b", d), ("b2a", d), ("b2b", d)],
        )

    def parameters(self):
        return [self.params[k] for k in self.param_names]

    def _gin_layer(self, tape, g, h, wa, ba, wb, bb):
        agg = tape.add(h, tape.spmm(g, h))
        mid = tape.relu(tape.add_row(tape.matmul(agg, wa), ba))
        return tape.add_row(tape.matmul(mid, wb), bb)

    def forward(self, tape, g, zhat):
        zhat = zhat if isinstance(zhat, Tensor) else Tensor(zhat)
        if zhat.shape[1] != self.in_dim:
            raise ShapeError(f"detector expects {self.in_dim} input columns, got {zhat.shape[1]}")
        if g.num_nodes != zhat.shape[0]:
            raise ShapeError(f"graph has {g.num_nodes} nodes, input {zhat.shape[0]} rows")
        p = self.params
        h = self._gin_layer(tape, g, zhat, p["W1a"], p["b1a"], p["W1b"], p["b1b"])
        h = self._gin_layer(tape, g, h, p["W2a"], p["b2a"], p["W2b"], p["b2b"])
        return tape.softmax(tape.matmul(h, p["W"]))

    def group_weights(self, g, zhat):
        return self.forward(Tape(), g, zhat).value.copy()


def scale_logits(z, t, tape=None):
    """Per-node temperature scaling. Returns ``(zhat, probs)`` tensors."""
    tape = tape if tape is not None else Tape()
    z = z if isinstance(z, Tensor) else Tensor(z)
    if not isinstance(t, Tensor):
        t = Tensor(np.asarray(t, dtype=np.float64).reshape(-1, 1))
    if np.any(t.value <= 0):
        raise DomainError("temperatures must be positive")
    zhat = tape.div_rows(z, t)
    return zhat, tape.softmax(zhat)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _masked(z, labels, mask):
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask selects no nodes")
    y = np.asarray(labels)[mask]
    if np.any(y < 0):
        raise ValueError("mask includes unlabeled nodes")
    return np.asarray(z, dtype=np.float64)[mask], y


def _nll(z, y, temperature):
    s = z / temperature
    s = s - s.max(axis=1, keepdims=True)
    logp = s - np.log(np.exp(s).sum(axis=1, keepdims=True))
    return -logp[np.arange(y.size), y].sum()


def ts_fit(z, labels, mask, lo=0.05, hi=10.0, tol=1e-4):
    """Single temperature minimising masked NLL, by golden-section search on log T."""
    zm, y = _masked(z, labels, mask)
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = math.log(lo), math.log(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = _nll(zm, y, math.exp(c)), _nll(zm, y, math.exp(d))
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = _nll(zm, y, math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = _nll(zm, y, math.exp(d))
    return math.exp((a + b) / 2.0)


@dataclass
class VectorScalingParams:
    w: np.ndarray
    b: np.ndarray

    def apply(self, z):
        return np.asarray(z, dtype=np.float64) * self.w + self.b


def vs_fit(z, labels, mask, steps=2000, lr=0.01):
    """Class-wise affine ``w_c * z_c + b_c`` by full-batch gradient descent on mean masked NLL."""
    zm, y = _masked(z, labels, mask)
    c = zm.shape[1]
    w = Tensor(np.ones((1, c)), requires_grad=True, name="w")
    b = Tensor(np.zeros((1, c)), requires_grad=True, name="b")
    onehot = np.zeros_like(zm)
    onehot[np.arange(y.size), y] = 1.0
    ones = np.ones((zm.shape[0], 1))
    for _ in range(steps):
        tape = Tape()
        scaled = tape.add_row(tape.mul(zm, tape.matmul(ones, w)), b)
        logp = tape.log(tape.softmax(scaled))
        loss = tape.wsum(logp, -onehot / y.size)
        grads = backward(tape, loss, [w, b])
        w.value -= lr * grads[w]
        b.value -= lr * grads[b]
    return VectorScalingParams(w.value[0].copy(), b.value[0].copy())


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(path, header, models):
    """Write a JSON header line followed by CGM1 parameter blocks.

    ``models`` maps a section name to an object with ``param_names`` and
    ``params``; blocks are written section by section in declared order.
    """
    header = dict(header)
    header["blocks"] = [
        {"section": sec, "name": name, "shape": list(m.params[name].shape)}
        for sec, m in models.items()
        for name in m.param_names
    ]
    buf = io.BytesIO()
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for m in models.values():
        for name in m.param_names:
            write_matrix(buf, m.params[name].value)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Return ``(header, {section: {name: array}})``."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ParseError("missing JSON header line", path, 1)
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path, 1) from None
    fh = io.BytesIO(raw[nl + 1:])
    sections = {}
    for block in header["blocks"]:
        m = read_matrix(fh)
        if list(m.shape) != block["shape"]:
            raise ParseError(f"block {block['name']} has shape {m.shape}, header says {block['shape']}", path)
        sections.setdefault(block["section"], {})[block["name"]] = m
    return header, sections
