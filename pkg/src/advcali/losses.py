"""Differentiable training losses: cross-entropy and group-wise ECE.

Group-ECE weights each soft group by its (masked) mass and compares the
group's weighted accuracy with its weighted confidence. With hard bin
membership as the groups and the absolute distance it reduces to the
binned ECE of :func:`advcali.metrics.ece`.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .autodiff import Tensor
from .exceptions import NumericError

__all__ = [
    "DistanceKind",
    "ConfidenceView",
    "cross_entropy",
    "confidence",
    "soft_acc",
    "soft_conf",
    "group_ece",
    "total_objective",
    "MIN_GROUP_MASS",
]

MIN_GROUP_MASS = 1e-12


class DistanceKind(str, Enum):
    SQUARED = "squared"
    ABSOLUTE = "absolute"


@dataclass
class ConfidenceView:
    """Per-node confidence, prediction and correctness.

    ``conf_tensor`` is the N x 1 tape output when the view was built on a
    tape; ``conf`` is always a plain array. ``correct`` is ``False`` where the
    label is missing.
    """

    conf: np.ndarray
    pred: np.ndarray
    correct: np.ndarray
    conf_tensor: Tensor = None

    @classmethod
    def from_probs(cls, probs, labels=None):
        probs = np.asarray(probs, dtype=np.float64)
        pred = np.argmax(probs, axis=1)
        conf = probs[np.arange(probs.shape[0]), pred]
        return cls(conf, pred, _correct(pred, labels))


def _correct(pred, labels):
    if labels is None:
        return np.zeros(pred.size, dtype=bool)
    labels = np.asarray(labels)
    return (labels >= 0) & (labels == pred)


def _mask(mask, n):
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ValueError(f"mask must have length {n}")
    return mask


def cross_entropy(tape, probs, labels, mask):
    """Summed negative log-likelihood of the true class over ``mask``."""
    n, c = probs.shape
    mask = _mask(mask, n)
    labels = np.asarray(labels)
    if np.any(labels[mask] < 0):
        raise ValueError("cross_entropy mask includes unlabeled nodes")
    rows = np.flatnonzero(mask)
    if np.any(probs.value[rows, labels[rows]] < 0):
        raise NumericError("negative probability at a true label")
    pick = np.zeros((n, c))
    pick[rows, labels[rows]] = -1.0
    return tape.wsum(tape.log(probs, floor=1e-12), pick)


def confidence(tape, probs, labels=None):
    """Max-probability confidence with the gradient routed to the argmax entry."""
    conf_t, pred = tape.rowmax(probs)
    return ConfidenceView(conf_t.value[:, 0].copy(), pred, _correct(pred, labels), conf_t)


def _group_stats(tape, groups, view, mask):
    """Masked mass, SoftAcc and SoftConf for every column of ``groups``.

    Columns whose masked mass is below ``MIN_GROUP_MASS`` get SoftAcc =
    SoftConf = 0 with zero gradient.
    """
    groups = groups if isinstance(groups, Tensor) else Tensor(groups)
    n, k = groups.shape
    mask = _mask(mask, n)
    w = mask.astype(np.float64)
    conf = view.conf_tensor if view.conf_tensor is not None else Tensor(view.conf.reshape(-1, 1))
    mass = tape.wsum(groups, w, axis=0)
    acc_num = tape.wsum(groups, w * view.correct, axis=0)
    conf_b = tape.matmul(conf, np.ones((1, k)))
    conf_num = tape.wsum(tape.mul(groups, conf_b), w, axis=0)
    alive = (mass.value >= MIN_GROUP_MASS).astype(np.float64)
    safe = tape.affine(mass, 1.0, 1.0 - alive)
    acc = tape.affine(tape.div(acc_num, safe), alive)
    cnf = tape.affine(tape.div(conf_num, safe), alive)
    return mass, acc, cnf, alive


def _column(groups, n):
    g = groups if isinstance(groups, Tensor) else Tensor(np.asarray(groups, dtype=np.float64).reshape(n, 1))
    return g


def soft_acc(tape, g_col, view, mask=None):
    """Group-mass-weighted accuracy of one soft group (1 x 1 tensor)."""
    n = view.conf.size
    _, acc, _, _ = _group_stats(tape, _column(g_col, n), view, mask)
    return acc


def soft_conf(tape, g_col, view, mask=None):
    """Group-mass-weighted confidence of one soft group (1 x 1 tensor)."""
    n = view.conf.size
    _, _, cnf, _ = _group_stats(tape, _column(g_col, n), view, mask)
    return cnf


def group_ece(tape, groups, view, mask=None, dist=DistanceKind.SQUARED):
    """Sum over groups of ``mass_j / |mask| * dist(SoftAcc_j, SoftConf_j)``."""
    dist = DistanceKind(dist)
    n = view.conf.size
    mask = _mask(mask, n)
    size = int(mask.sum())
    if size == 0:
        raise ValueError("group_ece needs a nonempty mask")
    mass, acc, cnf, alive = _group_stats(tape, groups, view, mask)
    gap = tape.sub(acc, cnf)
    d = tape.square(gap) if dist is DistanceKind.SQUARED else tape.abs(gap)
    return tape.wsum(tape.mul(mass, d), alive / size)


def total_objective(tape, ce, gece, lam):
    """``ce + lam * gece``."""
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    return tape.add(ce, tape.affine(gece, float(lam)))
