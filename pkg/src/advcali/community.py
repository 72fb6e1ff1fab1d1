"""Louvain community detection on undirected weighted graphs."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .rng import substream

__all__ = ["Partition", "louvain", "modularity", "write_partition_csv"]

LEVEL_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class Partition:
    community_id: np.ndarray
    num_communities: int
    level_modularity: tuple = field(default=())

    @classmethod
    def from_labels(cls, labels, level_modularity=()):
        """Relabel arbitrary ids densely, in order of first appearance by node index."""
        labels = np.asarray(labels)
        _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
        rank = np.empty(first.size, dtype=np.int64)
        rank[np.argsort(first)] = np.arange(first.size)
        return cls(rank[inv.ravel()], int(first.size), tuple(level_modularity))


def modularity(g, partition, resolution=1.0):
    """Newman modularity, or ``None`` for an edgeless graph."""
    ids = np.asarray(getattr(partition, "community_id", partition))
    a = g.to_csr()
    two_m = a.sum()
    if two_m == 0:
        return None
    k = int(ids.max()) + 1
    deg = np.asarray(a.sum(axis=1)).ravel()
    coo = a.tocoo()
    intra = np.bincount(ids[coo.row], weights=coo.data * (ids[coo.row] == ids[coo.col]), minlength=k)
    dc = np.bincount(ids, weights=deg, minlength=k)
    m = two_m / 2.0
    return float(np.sum(intra / 2.0 / m - resolution * (dc / two_m) ** 2))


def _modularity_csr(a, ids, resolution):
    # a may carry self-loops (aggregated graphs); diagonal entries already count both ends
    two_m = a.sum()
    deg = np.asarray(a.sum(axis=1)).ravel()
    coo = a.tocoo()
    same = ids[coo.row] == ids[coo.col]
    k = int(ids.max()) + 1
    intra = np.bincount(ids[coo.row], weights=coo.data * same, minlength=k)
    dc = np.bincount(ids, weights=deg, minlength=k)
    return float(np.sum(intra / two_m - resolution * (dc / two_m) ** 2))


def _local_moving(a, resolution, rng):
    n = a.shape[0]
    two_m = a.sum()
    deg = np.asarray(a.sum(axis=1)).ravel()
    indptr, indices, data = a.indptr, a.indices, a.data
    comm = np.arange(n)
    tot = deg.copy()
    moved_any = False
    while True:
        moved = False
        for i in rng.permutation(n):
            ci = comm[i]
            ki = deg[i]
            links = {}
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                if j != i:
                    links[comm[j]] = links.get(comm[j], 0.0) + data[p]
            tot[ci] -= ki
            scale = resolution * ki / two_m
            own_gain = links.get(ci, 0.0) - scale * tot[ci]
            best, best_gain = ci, own_gain
            for c in sorted(links):
                gain = links[c] - scale * tot[c]
                if gain > best_gain or (gain == best_gain and c < best):
                    best, best_gain = c, gain
            if best != ci and best_gain - own_gain <= 1e-12:
                best = ci
            tot[best] += ki
            if best != ci:
                comm[i] = best
                moved = moved_any = True
        if not moved:
            return comm, moved_any


def louvain(g, resolution=1.0, seed=0):
    """Two-phase Louvain; deterministic for a given seed.

    Levels stop once the modularity gain of a level falls below ``1e-7``.
    The returned partition records the modularity after each level.
    """
    n = g.num_nodes
    if g.num_edges == 0:
        return Partition(np.arange(n), n, ())
    rng = substream(seed, "shuffle")
    a = sp.csr_matrix(g.to_csr(), dtype=np.float64)
    node_comm = np.arange(n)
    q = _modularity_csr(a, node_comm, resolution)
    history = []
    while True:
        comm, moved = _local_moving(a, resolution, rng)
        if not moved:
            break
        _, comm = np.unique(comm, return_inverse=True)
        comm = comm.ravel()
        new_q = _modularity_csr(a, comm, resolution)
        node_comm = comm[node_comm]
        history.append(new_q)
        gain = new_q - q
        q = new_q
        k = int(comm.max()) + 1
        agg = sp.csr_matrix((np.ones(comm.size), (comm, np.arange(comm.size))), shape=(k, comm.size))
        a = sp.csr_matrix(agg @ a @ agg.T)
        a.sort_indices()
        if gain < LEVEL_TOL or k == 1:
            break
    return Partition.from_labels(node_comm, history)


def write_partition_csv(path, partition):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "community"])
        for i, c in enumerate(partition.community_id):
            w.writerow([i, int(c)])
