"""Seeded stochastic-block-model graphs and planted miscalibration."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graph import Graph, top_degree_mask
from .rng import substream

__all__ = [
    "SbmSpec",
    "PlantRule",
    "SyntheticInstance",
    "gen_sbm",
    "plant_miscalibration",
    "plant_target_mask",
    "build_instance",
]

TARGETS = ("top_degree", "class", "community")


@dataclass
class SbmSpec:
    block_sizes: list
    p_in: float
    p_out: float
    seed: int = 0
    feature_noise: float = 0.5

    def __post_init__(self):
        self.block_sizes = [int(b) for b in self.block_sizes]
        for name in ("p_in", "p_out"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.p_out > self.p_in:
            raise ValueError(f"p_out ({self.p_out}) must not exceed p_in ({self.p_in})")
        if not self.block_sizes or min(self.block_sizes) < 1:
            raise ValueError("block_sizes must be positive counts")
        if self.feature_noise < 0:
            raise ValueError("feature_noise must be nonnegative")

    def to_dict(self):
        return asdict(self)


@dataclass
class PlantRule:
    """Divide the logits of targeted nodes by ``tau``.

    ``target`` is ``"top_degree"`` (``value`` = fraction), ``"class"`` or
    ``"community"`` (``value`` = id). ``tau < 1`` sharpens, i.e. plants
    overconfidence.
    """

    target: str
    value: float = 0.25
    tau: float = 0.5

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}, got {self.target!r}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    def to_dict(self):
        return asdict(self)


def gen_sbm(spec):
    """Undirected SBM. Returns ``(graph, labels, features)``.

    Labels are block ids; features are one-hot block indicators plus
    Gaussian noise of standard deviation ``spec.feature_noise``.
    """
    sizes = np.asarray(spec.block_sizes)
    n = int(sizes.sum())
    labels = np.repeat(np.arange(sizes.size), sizes)
    rng = substream(spec.seed, "sbm/edges")
    src, dst = [], []
    for i in range(n - 1):
        others = np.arange(i + 1, n)
        p = np.where(labels[others] == labels[i], spec.p_in, spec.p_out)
        hit = others[rng.random(others.size) < p]
        src.append(np.full(hit.size, i))
        dst.append(hit)
    src = np.concatenate(src) if src else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(dst) if dst else np.zeros(0, dtype=np.int64)
    g = Graph.from_edges(n, src, dst)
    noise = substream(spec.seed, "sbm/features").normal(0.0, spec.feature_noise, (n, sizes.size))
    features = np.eye(sizes.size)[labels] + noise
    return g, labels, features


def plant_target_mask(rule, g, labels=None, partition=None):
    n = g.num_nodes
    if rule.target == "top_degree":
        return top_degree_mask(g, rule.value)
    if rule.target == "class":
        if labels is None:
            raise ValueError("class target needs labels")
        return np.asarray(labels) == int(rule.value)
    if partition is None:
        raise ValueError("community target needs a partition")
    ids = np.asarray(partition.community_id)
    if ids.size != n:
        raise ValueError("partition does not cover the graph")
    if int(rule.value) not in set(ids.tolist()):
        raise ValueError(f"community {rule.value} does not exist")
    return ids == int(rule.value)


def plant_miscalibration(logits, rule, g, labels=None, partition=None):
    """Copy of ``logits`` with targeted rows divided by ``rule.tau``."""
    out = np.array(logits, dtype=np.float64)
    mask = plant_target_mask(rule, g, labels, partition)
    out[mask] /= rule.tau
    return out


@dataclass(eq=False)
class SyntheticInstance:
    graph: Graph
    labels: np.ndarray
    features: np.ndarray
    labeled_mask: np.ndarray
    test_mask: np.ndarray
    clean_logits: np.ndarray = None
    logits: np.ndarray = None
    planted_mask: np.ndarray = None
    base_temperature: float = None


def build_instance(spec, rule=None, classifier=None, label_ratio=0.15, base_ts=False):
    """SBM graph, seeded split, optional classifier logits and planted fault.

    ``classifier`` is a :class:`~advcali.trainer.ClassifierConfig` (``None``
    skips logits). With ``base_ts`` the clean logits are first divided by the
    single temperature that minimises NLL over *all* labels, giving a
    globally calibrated instance to plant the fault into.
    """
    from .community import louvain
    from .models import ts_fit
    from .trainer import split_labels, train_classifier

    g, labels, features = gen_sbm(spec)
    labeled, test = split_labels(g.num_nodes, label_ratio, spec.seed)
    inst = SyntheticInstance(g, labels, features, labeled, test)
    if classifier is None:
        if rule is not None or base_ts:
            raise ValueError("planting and base calibration need classifier logits")
        return inst
    z = train_classifier(g, features, labels, labeled, classifier)
    if base_ts:
        inst.base_temperature = ts_fit(z, labels, np.ones(g.num_nodes, dtype=bool))
        z = z / inst.base_temperature
    inst.clean_logits = z
    inst.logits = z
    if rule is not None:
        partition = louvain(g, seed=spec.seed) if rule.target == "community" else None
        inst.planted_mask = plant_target_mask(rule, g, labels, partition)
        inst.logits = plant_miscalibration(z, rule, g, labels, partition)
    return inst
