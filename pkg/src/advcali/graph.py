"""Graph storage, GCN normalisation and dataset file formats.

Graphs are undirected, self-loop free and stored in compressed-row layout
with sorted neighbour lists. Products against the adjacency go through
``scipy.sparse`` so a propagation costs O(|V| + |E|).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .exceptions import ParseError, ShapeError, ValidationError

__all__ = [
    "Graph",
    "NormalizedAdjacency",
    "NodeDataset",
    "gcn_normalize",
    "degrees",
    "top_degree_mask",
    "load_dataset",
    "read_edges",
    "write_edges",
    "read_logits",
    "write_logits",
    "read_labels",
    "write_labels",
    "read_masks",
    "write_masks",
    "read_matrix",
    "write_matrix",
]


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    edge_weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_offsets", _frozen(self.row_offsets, np.int64))
        object.__setattr__(self, "col_indices", _frozen(self.col_indices, np.int64))
        object.__setattr__(self, "edge_weights", _frozen(self.edge_weights, np.float64))
        self._validate()

    def _validate(self):
        n = self.num_nodes
        ro, ci, w = self.row_offsets, self.col_indices, self.edge_weights
        if ro.shape != (n + 1,) or ro[0] != 0 or ro[-1] != ci.size:
            raise ValidationError("row_offsets inconsistent with col_indices")
        if np.any(np.diff(ro) < 0):
            raise ValidationError("row_offsets must be nondecreasing")
        if ci.size != w.size:
            raise ValidationError("edge_weights length differs from col_indices")
        if ci.size and (ci.min() < 0 or ci.max() >= n):
            raise ValidationError("col_indices out of range")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("edge weights must be finite and nonnegative")
        rows = np.repeat(np.arange(n), np.diff(ro))
        if np.any(rows == ci):
            raise ValidationError("self-loops are not stored in a Graph")
        same_row = rows[1:] == rows[:-1]
        if np.any(same_row & (np.diff(ci) <= 0)):
            raise ValidationError("neighbour lists must be strictly ascending")
        a = self.to_csr()
        if (a != a.T).nnz:
            raise ValidationError("adjacency is not symmetric")

    @classmethod
    def from_edges(cls, num_nodes, src, dst, weights=None):
        """Build from an edge list given in either or both directions.

        Duplicates collapse to one edge; self-loops are dropped. Conflicting
        weights for the same pair raise :class:`ValidationError`.
        """
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if weights is None:
            weights = np.ones(src.size)
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if not (src.size == dst.size == weights.size):
            raise ShapeError("src, dst and weights must have equal length")
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= num_nodes):
            raise ValidationError(f"edge endpoint outside [0, {num_nodes})")
        keep = src != dst
        src, dst, weights = src[keep], dst[keep], weights[keep]
        lo, hi = np.minimum(src, dst), np.maximum(src, dst)
        key = lo * num_nodes + hi
        order = np.argsort(key, kind="stable")
        key, lo, hi, weights = key[order], lo[order], hi[order], weights[order]
        first = np.ones(key.size, dtype=bool)
        first[1:] = key[1:] != key[:-1]
        group = np.cumsum(first) - 1
        ref = weights[first][group]
        if np.any(ref != weights):
            raise ValidationError("conflicting weights for a repeated edge")
        lo, hi, weights = lo[first], hi[first], weights[first]
        rows = np.concatenate([lo, hi])
        cols = np.concatenate([hi, lo])
        vals = np.concatenate([weights, weights])
        a = sp.csr_matrix((vals, (rows, cols)), shape=(num_nodes, num_nodes))
        a.sort_indices()
        return cls(num_nodes, a.indptr, a.indices, a.data)

    @property
    def num_edges(self):
        return self.col_indices.size // 2

    def edge_list(self):
        """Undirected edges as ``(src, dst, weight)`` arrays with ``src < dst``."""
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.row_offsets))
        upper = rows < self.col_indices
        return rows[upper], self.col_indices[upper], self.edge_weights[upper]

    def neighbors(self, i):
        return self.col_indices[self.row_offsets[i]:self.row_offsets[i + 1]]

    @cached_property
    def _csr(self):
        return sp.csr_matrix(
            (self.edge_weights, self.col_indices, self.row_offsets),
            shape=(self.num_nodes, self.num_nodes),
        )

    def to_csr(self):
        return self._csr

    def permute(self, perm):
        """Relabel nodes so that old node ``perm[k]`` becomes node ``k``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        s, d, w = self.edge_list()
        return Graph.from_edges(self.num_nodes, inv[s], inv[d], w)


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """``D^-1/2 (A + I) D^-1/2`` in the same compressed-row layout."""

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    @cached_property
    def _csr(self):
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets),
            shape=(self.num_nodes, self.num_nodes),
        )

    def to_csr(self):
        return self._csr


def gcn_normalize(g):
    """Symmetrically normalised adjacency with self-loops added."""
    a = g.to_csr() + sp.identity(g.num_nodes, format="csr")
    a = sp.csr_matrix(a)
    a.sort_indices()
    d = np.asarray(a.sum(axis=1)).ravel()
    rows = np.repeat(np.arange(g.num_nodes), np.diff(a.indptr))
    # one rounding for the sqrt of the product keeps equal-degree entries exact
    vals = a.data / np.sqrt(d[rows] * d[a.indices])
    return NormalizedAdjacency(
        g.num_nodes,
        _frozen(a.indptr, np.int64),
        _frozen(a.indices, np.int64),
        _frozen(vals, np.float64),
    )


def ceil_fraction(fraction, n):
    """``ceil(fraction * n)`` without float fuzz (0.15 * 100 is 15, not 16)."""
    return math.ceil(round(fraction * n, 9))


def degrees(g):
    """Structural degree (neighbour count) of every node."""
    return np.diff(g.row_offsets).astype(np.int64)


def top_degree_mask(g, fraction):
    """Boolean mask of the ``ceil(fraction * N)`` highest-degree nodes.

    Ties are broken by ascending node index.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = g.num_nodes
    k = ceil_fraction(fraction, n)
    deg = degrees(g)
    order = np.lexsort((np.arange(n), -deg))
    mask = np.zeros(n, dtype=bool)
    mask[order[:k]] = True
    return mask


@dataclass(frozen=True, eq=False)
class NodeDataset:
    logits: np.ndarray
    labels: np.ndarray
    labeled_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int = field(default=None)

    def __post_init__(self):
        logits = _frozen(self.logits, np.float64)
        if logits.ndim != 2:
            raise ShapeError("logits must be a 2-D array")
        n, c = logits.shape
        if self.num_classes is None:
            object.__setattr__(self, "num_classes", c)
        elif self.num_classes != c:
            raise ShapeError(f"num_classes={self.num_classes} but logits have {c} columns")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        object.__setattr__(self, "labeled_mask", _frozen(self.labeled_mask, bool))
        object.__setattr__(self, "test_mask", _frozen(self.test_mask, bool))
        for name in ("labels", "labeled_mask", "test_mask"):
            if getattr(self, name).shape != (n,):
                raise ShapeError(f"{name} must have length {n}")
        if not np.all(np.isfinite(logits)):
            raise ValidationError("logits contain non-finite values")
        if np.any((self.labels < -1) | (self.labels >= c)):
            raise ValidationError(f"labels must lie in [0, {c}) or be -1")
        if np.any(self.labeled_mask & self.test_mask):
            raise ValidationError("labeled and test masks overlap")
        if np.any(self.labels[self.labeled_mask] < 0):
            raise ValidationError("a labeled node has no label")

    @property
    def num_nodes(self):
        return self.logits.shape[0]


# ---------------------------------------------------------------- file formats

def _fmt(x):
    return repr(float(x))


def read_edges(path):
    """Parse ``edges.tsv``. Returns ``(num_nodes or None, src, dst, weights)``.

    A ``# num_nodes=N`` comment, if present, fixes the node count.
    """
    path = Path(path)
    n = None
    src, dst, wts = [], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("num_nodes="):
                    try:
                        n = int(body.split("=", 1)[1])
                    except ValueError:
                        raise ParseError("bad num_nodes directive", path, lineno) from None
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise ParseError(f"expected 2 or 3 tab-separated fields, got {len(parts)}", path, lineno)
            try:
                s, d = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError:
                raise ParseError(f"cannot parse edge {line!r}", path, lineno) from None
            if s < 0 or d < 0:
                raise ParseError("negative node id", path, lineno)
            src.append(s)
            dst.append(d)
            wts.append(w)
    return n, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(wts)


def write_edges(path, g):
    s, d, w = g.edge_list()
    with open(path, "w") as fh:
        fh.write(f"# num_nodes={g.num_nodes}\n")
        for a, b, x in zip(s, d, w):
            if x == 1.0:
                fh.write(f"{a}\t{b}\n")
            else:
                fh.write(f"{a}\t{b}\t{_fmt(x)}\n")


def _header(path, fh, tag, nfields):
    line = fh.readline()
    parts = line.strip().split(",")
    if len(parts) != nfields or parts[0] != tag:
        raise ParseError(f"expected header '{tag},...' with {nfields} fields", path, 1)
    try:
        return [int(p) for p in parts[1:]]
    except ValueError:
        raise ParseError("non-integer dimension in header", path, 1) from None


def read_logits(path, tag="logits"):
    path = Path(path)
    with open(path) as fh:
        n, c = _header(path, fh, tag, 3)
        rows = []
        for lineno, raw in enumerate(fh, 2):
            line = raw.strip()
            if not line:
                continue
            try:
                row = [float(x) for x in line.split(",")]
            except ValueError:
                raise ParseError(f"cannot parse row {line!r}", path, lineno) from None
            if len(row) != c:
                raise ShapeError(f"{path}:{lineno}: expected {c} values, got {len(row)}")
            rows.append(row)
    if len(rows) != n:
        raise ShapeError(f"{path}: header declares {n} rows, found {len(rows)}")
    return np.array(rows, dtype=np.float64).reshape(n, c)


def write_logits(path, z, tag="logits"):
    """Dense ``N x C`` matrix as CSV under a ``tag,N,C`` header (also used for probabilities)."""
    z = np.asarray(z, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write(f"{tag},{z.shape[0]},{z.shape[1]}\n")
        for row in z:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def read_labels(path):
    path = Path(path)
    with open(path) as fh:
        (n,) = _header(path, fh, "labels", 2)
        out = []
        for lineno, raw in enumerate(fh, 2):
            line = raw.strip()
            if not line:
                continue
            try:
                out.append(int(line))
            except ValueError:
                raise ParseError(f"cannot parse label {line!r}", path, lineno) from None
    if len(out) != n:
        raise ShapeError(f"{path}: header declares {n} labels, found {len(out)}")
    return np.array(out, dtype=np.int64)


def write_labels(path, labels):
    labels = np.asarray(labels)
    with open(path, "w") as fh:
        fh.write(f"labels,{labels.size}\n")
        for y in labels:
            fh.write(f"{int(y)}\n")


def read_masks(path, num_nodes):
    path = Path(path)
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path, e.lineno) from None
    masks = []
    for key in ("labeled", "test"):
        idx = obj.get(key) if isinstance(obj, dict) else None
        if not isinstance(idx, list) or not all(isinstance(i, int) for i in idx):
            raise ParseError(f"'{key}' must be a list of integers", path)
        idx = np.array(idx, dtype=np.int64)
        if idx.size and (np.any(np.diff(idx) <= 0)):
            raise ValidationError(f"{path}: '{key}' indices must be strictly ascending")
        if idx.size and (idx[0] < 0 or idx[-1] >= num_nodes):
            raise ValidationError(f"{path}: '{key}' index outside [0, {num_nodes})")
        m = np.zeros(num_nodes, dtype=bool)
        m[idx] = True
        masks.append(m)
    if np.any(masks[0] & masks[1]):
        raise ValidationError(f"{path}: labeled and test indices overlap")
    return masks[0], masks[1]


def write_masks(path, labeled_mask, test_mask):
    obj = {
        "labeled": [int(i) for i in np.flatnonzero(labeled_mask)],
        "test": [int(i) for i in np.flatnonzero(test_mask)],
    }
    Path(path).write_text(json.dumps(obj) + "\n")


_MAGIC = b"CGM1"


def write_matrix(fh_or_path, m):
    """Write a matrix in the CGM1 binary layout (vectors as one row)."""
    m = np.asarray(m, dtype="<f8")
    if m.ndim == 1:
        m = m.reshape(1, -1)
    payload = _MAGIC + struct.pack("<II", *m.shape) + np.ascontiguousarray(m).tobytes()
    if hasattr(fh_or_path, "write"):
        fh_or_path.write(payload)
    else:
        Path(fh_or_path).write_bytes(payload)


def read_matrix(fh_or_path):
    if hasattr(fh_or_path, "read"):
        fh, name = fh_or_path, getattr(fh_or_path, "name", None)
    else:
        fh, name = open(fh_or_path, "rb"), fh_or_path
    try:
        head = fh.read(12)
        if len(head) != 12 or head[:4] != _MAGIC:
            raise ParseError("missing CGM1 header", name)
        n, c = struct.unpack("<II", head[4:])
        raw = fh.read(8 * n * c)
        if len(raw) != 8 * n * c:
            raise ParseError(f"truncated CGM1 payload, expected {n}x{c} values", name)
    finally:
        if fh is not fh_or_path:
            fh.close()
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(n, c)


def load_dataset(graph_path, logits_path, labels_path, masks_path):
    """Read the four dataset files and validate them against each other."""
    n_decl, src, dst, w = read_edges(graph_path)
    labels = read_labels(labels_path)
    n = n_decl if n_decl is not None else labels.size
    if labels.size != n:
        raise ShapeError(f"labels have {labels.size} entries for a {n}-node graph")
    g = Graph.from_edges(n, src, dst, w)
    logits = read_logits(logits_path)
    if logits.shape[0] != n:
        raise ShapeError(f"logits have {logits.shape[0]} rows for a {n}-node graph")
    labeled, test = read_masks(masks_path, n)
    c = logits.shape[1]
    if np.any((labels < -1) | (labels >= c)):
        bad = int(np.flatnonzero((labels < -1) | (labels >= c))[0])
        raise ValidationError(f"label {labels[bad]} of node {bad} outside [0, {c})")
    return g, NodeDataset(logits, labels, labeled, test, c)
