"""Binned calibration metrics evaluated on node subsets.

Undefined metrics (empty evaluation population) are returned as ``None``
and serialised as JSON ``null``; zero always means perfect calibration.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DomainError
from .graph import degrees, top_degree_mask
from .losses import ConfidenceView

__all__ = [
    "BinStats",
    "MetricReport",
    "bin_index",
    "ece",
    "degree_ece",
    "classwise_ece",
    "subgraph_ece",
    "largest_community_mask",
    "group_diagnostics",
    "evaluate",
    "write_reliability_csv",
]

DEFAULT_BINS = 15


@dataclass
class BinStats:
    bin: int
    lower: float
    upper: float
    count: int
    acc: float
    conf: float


def bin_index(conf, n_bins):
    """1-based bin of each confidence for intervals ``((m-1)/M, m/M]``."""
    conf = np.asarray(conf, dtype=np.float64)
    m = np.ceil(conf * n_bins).astype(np.int64)
    m = np.clip(m, 1, n_bins)
    # exact boundary handling against the same float edges the bins report
    m = np.where(conf <= (m - 1) / n_bins, m - 1, m)
    m = np.where(conf > m / n_bins, m + 1, m)
    return np.clip(m, 1, n_bins)


def ece(conf, correct, n_bins=DEFAULT_BINS):
    """Expected calibration error and per-bin statistics."""
    conf = np.asarray(conf, dtype=np.float64).ravel()
    correct = np.asarray(correct, dtype=bool).ravel()
    if conf.size == 0:
        raise ValueError("ece needs a nonempty population")
    if conf.shape != correct.shape:
        raise ValueError("conf and correct differ in length")
    if np.any(conf <= 0) or np.any(conf > 1) or not np.all(np.isfinite(conf)):
        raise DomainError("confidences must lie in (0, 1]")
    idx = bin_index(conf, n_bins)
    n = conf.size
    total = 0.0
    bins = []
    for m in range(1, n_bins + 1):
        sel = idx == m
        cnt = int(sel.sum())
        if cnt:
            acc = float(correct[sel].mean())
            cf = float(conf[sel].mean())
            total += cnt / n * abs(acc - cf)
        else:
            acc = cf = 0.0
        bins.append(BinStats(m, (m - 1) / n_bins, m / n_bins, cnt, acc, cf))
    return total, bins


def _subset_ece(view, sel, n_bins):
    if not np.any(sel):
        return None
    return ece(view.conf[sel], view.correct[sel], n_bins)[0]


def degree_ece(view, g, eval_mask, fraction=0.25, n_bins=DEFAULT_BINS):
    sel = np.asarray(eval_mask, dtype=bool) & top_degree_mask(g, fraction)
    return _subset_ece(view, sel, n_bins)


def classwise_ece(view, labels, eval_mask, n_bins=DEFAULT_BINS):
    """Mean of per-class ECEs over classes with at least one evaluated member."""
    labels = np.asarray(labels)
    em = np.asarray(eval_mask, dtype=bool) & (labels >= 0)
    if not em.any():
        raise ValueError("no labeled nodes in the evaluation mask")
    vals = [_subset_ece(view, em & (labels == c), n_bins) for c in np.unique(labels[em])]
    return float(np.mean(vals))


def largest_community_mask(partition):
    """Members of the largest community; ties go to the lowest community id."""
    ids = np.asarray(partition.community_id)
    sizes = np.bincount(ids)
    return ids == int(np.argmax(sizes))


def subgraph_ece(view, g, partition, eval_mask, n_bins=DEFAULT_BINS):
    if len(partition.community_id) != g.num_nodes:
        raise ValueError("partition does not cover the graph")
    sel = np.asarray(eval_mask, dtype=bool) & largest_community_mask(partition)
    return _subset_ece(view, sel, n_bins)


def group_diagnostics(groups, g, labels):
    """Spread of hard group assignments across degree and across class 0.

    Returns ``(degree_std, class0_std)``; ``class0_std`` is ``None`` when no
    node has label 0.
    """
    groups = np.asarray(groups)
    k = groups.shape[1]
    assign = np.argmax(groups, axis=1)
    deg = degrees(g).astype(np.float64)
    means = [deg[assign == j].mean() for j in range(k) if np.any(assign == j)]
    degree_std = float(np.std(means))
    class0 = np.asarray(labels) == 0
    if not class0.any():
        return degree_std, None
    p = np.bincount(assign[class0], minlength=k) / class0.sum()
    return degree_std, float(np.std(p))


@dataclass
class MetricReport:
    global_ece: float = None
    degree_ece: float = None
    class_ece: float = None
    subgraph_ece: float = None
    bins: list = field(default_factory=list)
    population: dict = field(default_factory=dict)

    def to_dict(self):
        out = {}
        for key in ("global_ece", "degree_ece", "class_ece", "subgraph_ece"):
            v = getattr(self, key)
            out[key] = None if v is None or (isinstance(v, float) and math.isnan(v)) else v
        out["bins"] = [asdict(b) for b in self.bins]
        out["population"] = dict(self.population)
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=False)


def evaluate(probs, labels, eval_mask, g=None, partition=None, metrics=("global", "degree", "class", "subgraph"),
             n_bins=DEFAULT_BINS, fraction=0.25):
    """Build a :class:`MetricReport` for the requested metrics on ``eval_mask``."""
    labels = np.asarray(labels)
    view_mask = np.asarray(eval_mask, dtype=bool) & (labels >= 0)
    view = ConfidenceView.from_probs(probs, labels)
    report = MetricReport()
    if "global" in metrics:
        if view_mask.any():
            report.global_ece, report.bins = ece(view.conf[view_mask], view.correct[view_mask], n_bins)
        report.population["global"] = int(view_mask.sum())
    if "degree" in metrics:
        if g is None:
            raise ValueError("degree ECE needs the graph")
        report.degree_ece = degree_ece(view, g, view_mask, fraction, n_bins)
        report.population["degree"] = int((view_mask & top_degree_mask(g, fraction)).sum())
    if "class" in metrics:
        report.class_ece = classwise_ece(view, labels, view_mask, n_bins) if view_mask.any() else None
        report.population["class"] = int(view_mask.sum())
    if "subgraph" in metrics:
        if partition is None:
            raise ValueError("subgraph ECE needs a partition")
        report.subgraph_ece = subgraph_ece(view, g, partition, view_mask, n_bins)
        report.population["subgraph"] = int((view_mask & largest_community_mask(partition)).sum())
    return report


def write_reliability_csv(path, bins):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "lower", "upper", "count", "acc", "conf"])
        for b in bins:
            w.writerow([b.bin, repr(b.lower), repr(b.upper), b.count, repr(b.acc), repr(b.conf)])
