"""Adversarial calibration training, baselines' splits and model selection.

One epoch of :class:`AdvCaliTrainer`:

1. the calibrator produces temperatures, scaled logits and probabilities;
2. the detector groups nodes from the scaled logits;
3. Group-ECE is evaluated on the labeled nodes;
4. the detector takes one Adam step *up* that loss;
5. the forward pass is rebuilt with the updated detector, and
   cross-entropy plus ``lam * Group-ECE`` is formed;
6. the calibrator takes one Adam step *down* that objective.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import Tape, Tensor, backward
from .exceptions import NumericError
from .graph import Graph, ceil_fraction, gcn_normalize
from .losses import DistanceKind, confidence, cross_entropy, group_ece, total_objective
from .metrics import bin_index, ece, group_diagnostics
from .models import GcnTemperatureScaler, GinGroupDetector, init_params, scale_logits
from .rng import derive_seed, substream

__all__ = [
    "VARIANTS",
    "TrainConfig",
    "TrainTrace",
    "EpochRecord",
    "Adam",
    "AdvCaliTrainer",
    "train_advcali",
    "ClassifierConfig",
    "train_classifier",
    "split_labels",
    "CvResult",
    "cross_validate",
    "calibrated_probs",
    "config_hash",
]

VARIANTS = ("full", "no_ce", "no_group_ece", "min_mode", "absolute")


@dataclass
class TrainConfig:
    lam: float = 1.0
    n_groups: int = 8
    epochs: int = 300
    lr_calibrator: float = 0.01
    lr_detector: float = 0.01
    weight_decay: float = 5e-4
    seed: int = 0
    dist: str = "squared"
    variant: str = "full"
    hidden_calibrator: int = 16
    hidden_detector: int = 16
    t_min: float = 1e-3
    # diagnostic: replace the detector by hard confidence-bin membership on epoch 0
    hard_bin_groups: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        self.dist = DistanceKind(self.dist).value
        if self.variant == "absolute":
            self.dist = DistanceKind.ABSOLUTE.value
        if self.lam < 0 or not math.isfinite(self.lam):
            raise ValueError(f"lam must be a finite nonnegative number, got {self.lam}")
        if self.n_groups < 1:
            raise ValueError("n_groups must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        for name in ("lr_calibrator", "lr_detector", "t_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.hidden_calibrator < 1 or self.hidden_detector < 1:
            raise ValueError("hidden dimensions must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig field(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def config_hash(obj):
    """Stable digest of canonicalised JSON."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EpochRecord:
    epoch: int
    ce: float
    group_ece: float
    total: float
    degree_std: float
    class0_std: float


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "ce", "group_ece", "total", "degree_std", "class0_std"])
            for r in self.records:
                w.writerow([r.epoch] + ["" if v is None else repr(v)
                                        for v in (r.ce, r.group_ece, r.total, r.degree_std, r.class0_std)])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        def num(v):
            return None if v == "" else float(v)
        return cls([EpochRecord(int(r["epoch"]), num(r["ce"]), num(r["group_ece"]), num(r["total"]),
                                num(r["degree_std"]), num(r["class0_std"])) for r in rows])


class Adam:
    """Adam with optional L2 weight decay folded into the gradient."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0

    def step(self, grads, ascend=False):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            g = grads[p]
            if ascend:
                g = -g
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            p.value -= self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


def hard_bin_groups(conf, n_bins):
    """One-hot membership of each node in its confidence bin (N x n_bins)."""
    idx = bin_index(conf, n_bins) - 1
    out = np.zeros((len(conf), n_bins))
    out[np.arange(len(conf)), idx] = 1.0
    return out


@dataclass
class ForwardState:
    tape: Tape
    temperatures: Tensor
    zhat: Tensor
    probs: Tensor
    groups: Tensor
    ce: Tensor
    group_ece: Tensor
    total: Tensor


class AdvCaliTrainer:
    """Holds both players and their optimisers; :meth:`epoch` runs one round."""

    def __init__(self, g, ds, cfg):
        if not np.any(ds.labeled_mask):
            raise ValueError("labeled mask is empty")
        self.g = g
        self.adj = gcn_normalize(g)
        self.ds = ds
        self.cfg = cfg
        self.logits = Tensor(ds.logits)
        c = ds.num_classes
        self.calibrator = GcnTemperatureScaler(
            c, cfg.hidden_calibrator, cfg.t_min, seed=derive_seed(cfg.seed, "init/calibrator"))
        self.use_detector = cfg.variant != "no_group_ece"
        self.detector = GinGroupDetector(
            c, cfg.n_groups, cfg.hidden_detector, seed=derive_seed(cfg.seed, "init/detector"))
        self.opt_c = Adam(self.calibrator.parameters(), cfg.lr_calibrator, weight_decay=cfg.weight_decay)
        self.opt_g = Adam(self.detector.parameters(), cfg.lr_detector)
        self.epochs_done = 0
        self.trace = TrainTrace()

    # -- pieces -------------------------------------------------------------

    def forward(self):
        cfg, ds = self.cfg, self.ds
        tape = Tape()
        t = self.calibrator.forward(tape, self.adj, self.logits)
        zhat, probs = scale_logits(self.logits, t, tape)
        view = confidence(tape, probs, ds.labels)
        ce = cross_entropy(tape, probs, ds.labels, ds.labeled_mask)
        groups = gece = None
        if self.use_detector:
            if cfg.hard_bin_groups and self.epochs_done == 0:
                groups = Tensor(hard_bin_groups(view.conf, cfg.hard_bin_groups))
            else:
                groups = self.detector.forward(tape, self.g, zhat)
            gece = group_ece(tape, groups, view, ds.labeled_mask, cfg.dist)
        if not self.use_detector:
            total = ce
        elif cfg.variant == "no_ce":
            total = tape.affine(gece, cfg.lam)
        else:
            total = total_objective(tape, ce, gece, cfg.lam)
        for name, v in (("cross-entropy", ce), ("group-ECE", gece), ("objective", total)):
            if v is not None and not math.isfinite(v.item()):
                raise NumericError(f"epoch {self.epochs_done}: non-finite {name}")
        return ForwardState(tape, t, zhat, probs, groups, ce, gece, total)

    def detector_step(self):
        """One Adam step on the detector; ascent unless the variant is ``min_mode``."""
        if not self.use_detector:
            return
        st = self.forward()
        grads = backward(st.tape, st.group_ece, self.detector.parameters())
        self.opt_g.step(grads, ascend=self.cfg.variant != "min_mode")

    def calibrator_step(self):
        st = self.forward()
        grads = backward(st.tape, st.total, self.calibrator.parameters())
        self.opt_c.step(grads)
        return st

    def epoch(self, callback=None):
        try:
            self.detector_step()
            st = self.calibrator_step()
        except NumericError as e:
            msg = str(e)
            if not msg.startswith("epoch"):
                msg = f"epoch {self.epochs_done}: {msg}"
            raise NumericError(msg) from None
        dstd = c0std = None
        gval = None
        if st.groups is not None:
            dstd, c0std = group_diagnostics(st.groups.value, self.g, self.ds.labels)
            gval = st.group_ece.item()
        self.trace.records.append(
            EpochRecord(self.epochs_done, st.ce.item(), gval, st.total.item(), dstd, c0std))
        if callback is not None:
            callback(self.epochs_done, st)
        self.epochs_done += 1
        return st

    def run(self, callback=None):
        for _ in range(self.cfg.epochs - self.epochs_done):
            self.epoch(callback)
        return self.calibrator, self.detector, self.trace


def train_advcali(g, ds, cfg, callback=None):
    """Run the full adversarial loop. Returns ``(calibrator, detector, trace)``.

    ``callback(epoch, state)`` sees the forward state each calibrator step
    was computed from.
    """
    return AdvCaliTrainer(g, ds, cfg).run(callback)


# ------------------------------------------------------------ classifier

@dataclass
class ClassifierConfig:
    epochs: int = 200
    lr: float = 0.01
    weight_decay: float = 5e-4
    hidden: int = 16
    seed: int = 0
    # False drops message passing (identity operator), i.e. a two-layer MLP
    propagate: bool = True


def train_classifier(g, features, labels, mask, cfg=None):
    """Two-layer GCN ``A relu(A X W1) W2`` trained on masked mean cross-entropy.

    Returns the pre-softmax logits of every node. With ``cfg.propagate``
    false the operator ``A`` is the identity.
    """
    cfg = cfg or ClassifierConfig()
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("labeled mask is empty")
    x = Tensor(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels)
    c = int(labels[labels >= 0].max()) + 1
    adj = gcn_normalize(g if cfg.propagate else Graph.from_edges(g.num_nodes, [], []))
    params = init_params(derive_seed(cfg.seed, "init/classifier"),
                         [("W1", (x.shape[1], cfg.hidden)), ("W2", (cfg.hidden, c))])
    opt = Adam([params["W1"], params["W2"]], cfg.lr, weight_decay=cfg.weight_decay)

    def fwd(tape):
        h = tape.relu(tape.spmm(adj, tape.matmul(x, params["W1"])))
        return tape.spmm(adj, tape.matmul(h, params["W2"]))

    for epoch in range(cfg.epochs):
        tape = Tape()
        z = fwd(tape)
        loss = tape.affine(cross_entropy(tape, tape.softmax(z), labels, mask), 1.0 / mask.sum())
        if not math.isfinite(loss.item()):
            raise NumericError(f"epoch {epoch}: non-finite classifier loss")
        opt.step(backward(tape, loss, opt.params))
    return fwd(Tape()).value.copy()


# ------------------------------------------------------------ splits and CV

def split_labels(n, ratio=0.15, seed=0):
    """Seeded split: ``ceil(ratio * n)`` labeled nodes, the rest test."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    if n < 2:
        raise ValueError("need at least 2 nodes to split")
    perm = substream(seed, "split").permutation(n)
    k = min(max(ceil_fraction(ratio, n), 1), n - 1)
    labeled = np.zeros(n, dtype=bool)
    labeled[perm[:k]] = True
    return labeled, ~labeled


@dataclass
class CvResult:
    configs: list
    fold_ece: list
    mean_ece: list
    selected: int

    @property
    def selected_config(self):
        return self.configs[self.selected]

    def to_dict(self):
        return {
            "configs": [c.to_dict() for c in self.configs],
            "fold_ece": self.fold_ece,
            "mean_ece": self.mean_ece,
            "selected": self.selected,
            "selected_config": self.selected_config.to_dict(),
        }


def calibrated_probs(calibrator, g, logits):
    from .models import softmax

    t = calibrator.temperatures(gcn_normalize(g), logits)
    return softmax(np.asarray(logits) / t[:, None]), t


def cross_validate(g, ds, grid, n_folds=3, seed=0, n_bins=15, done=None, on_fold=None):
    """k-fold model selection over ``grid`` using held-out global ECE.

    ``done`` maps ``(config_index, fold)`` to an already computed ECE and is
    used to resume; ``on_fold(config_index, fold, value)`` is called for each
    newly computed fold.
    """
    from .graph import NodeDataset

    grid = list(grid)
    if not grid:
        raise ValueError("empty configuration grid")
    labeled = np.flatnonzero(ds.labeled_mask)
    if labeled.size < n_folds:
        raise ValueError(f"need at least {n_folds} labeled nodes")
    perm = substream(seed, "cv").permutation(labeled)
    folds = np.array_split(perm, n_folds)
    done = dict(done or {})
    fold_ece = []
    for ci, cfg in enumerate(grid):
        row = []
        for f in range(n_folds):
            if (ci, f) in done:
                row.append(done[(ci, f)])
                continue
            held = np.zeros(ds.num_nodes, dtype=bool)
            held[folds[f]] = True
            train = ds.labeled_mask & ~held
            sub = NodeDataset(ds.logits, ds.labels, train, held, ds.num_classes)
            calibrator, _, _ = train_advcali(g, sub, cfg)
            probs, _ = calibrated_probs(calibrator, g, ds.logits)
            pred = probs.argmax(axis=1)
            val = ece(probs.max(axis=1)[held], pred[held] == ds.labels[held], n_bins)[0]
            row.append(val)
            if on_fold is not None:
                on_fold(ci, f, val)
        fold_ece.append(row)
    means = [float(np.mean(r)) for r in fold_ece]
    selected = int(np.argmin(means))
    return CvResult(grid, fold_ece, means, selected)
