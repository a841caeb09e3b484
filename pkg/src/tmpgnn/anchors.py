"""Anchor-set sampling and hop-truncated shortest paths on the supra-graph."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import sparse

from .validation import check_random_state


@dataclass(frozen=True)
class AnchorSetFamily:
    """``copies * scales`` random node subsets; set ``i`` of a copy keeps each node w.p. ``2**-(i+1)``."""

    sets: Tuple[np.ndarray, ...]
    num_nodes: int
    copies: int
    scales: int
    seed: Optional[int]

    def __len__(self):
        return len(self.sets)

    def to_dict(self):
        return {
            "num_nodes": self.num_nodes,
            "copies": self.copies,
            "scales": self.scales,
            "seed": self.seed,
            "sets": [s.tolist() for s in self.sets],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(np.asarray(s, dtype=np.int64) for s in d["sets"]),
                   int(d["num_nodes"]), int(d["copies"]), int(d["scales"]), d.get("seed"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def num_scales(n):
    return max(1, math.ceil(math.log2(n)))


def sample_anchor_sets(num_nodes, copies=1, seed=None):
    """Bourgain-style anchor sets over ``num_nodes`` supra-graph nodes.

    Empty draws are redrawn, so every returned set is nonempty.
    """
    if num_nodes < 2:
        raise ValueError("anchor sampling needs at least 2 nodes")
    if copies < 1:
        raise ValueError("copies must be >= 1")
    rng = check_random_state(seed)
    k = num_scales(num_nodes)
    sets = []
    for _ in range(copies):
        for i in range(1, k + 1):
            p = 2.0 ** -i
            while True:
                members = np.flatnonzero(rng.random(num_nodes) < p)
                if len(members):
                    break
            sets.append(members.astype(np.int64))
    return AnchorSetFamily(tuple(sets), int(num_nodes), int(copies), k,
                           seed if isinstance(seed, (int, np.integer)) else None)


def supra_skeleton(g, delta=1, intra_only=False):
    """Unweighted undirected NT x NT skeleton: intra-layer edges plus chain edges
    joining ``(v, t)`` and ``(v, t + delta)``."""
    skel = g.intra_layer_skeleton()
    if intra_only or g.num_layers <= delta:
        return skel
    n, N = g.num_node_layers, g.num_nodes
    a = np.arange(n - N * delta)
    b = a + N * delta
    chain = sparse.coo_matrix((np.ones(2 * len(a)), (np.r_[a, b], np.r_[b, a])), shape=(n, n))
    out = (skel + chain).tocsr()
    out.data[:] = 1.0
    return out


class TruncatedDistanceMap:
    """Hop distances up to ``q``; anything farther is ``inf``.

    Stored sparsely as ``hops + 1`` so that self-distance 0 survives.
    """

    def __init__(self, encoded, q):
        self._enc = encoded.tocsr()
        self._enc.sort_indices()
        self.q = int(q)

    @property
    def num_nodes(self):
        return self._enc.shape[0]

    def distance(self, u, v):
        val = self._enc[u, v]
        return math.inf if val == 0 else float(val - 1)

    def row(self, v):
        """Nodes reachable from ``v`` within ``q`` hops and their distances."""
        lo, hi = self._enc.indptr[v], self._enc.indptr[v + 1]
        return self._enc.indices[lo:hi].copy(), self._enc.data[lo:hi] - 1.0

    def pairs(self, max_dist=None):
        """All stored ``(v, u, d)`` triples with ``d <= max_dist``."""
        coo = self._enc.tocoo()
        d = coo.data - 1.0
        keep = np.ones(len(d), bool) if max_dist is None else d <= max_dist
        return coo.row[keep].astype(np.int64), coo.col[keep].astype(np.int64), d[keep]

    def to_dense(self):
        out = np.full(self._enc.shape, np.inf)
        coo = self._enc.tocoo()
        out[coo.row, coo.col] = coo.data - 1.0
        return out


def truncated_distances(adjacency, q=2):
    """Breadth-first hop distances from every node, cut off at depth ``q``.

    ``adjacency`` is treated as an unweighted undirected graph.
    """
    if q < 1:
        raise ValueError("hop cutoff q must be >= 1")
    A = sparse.csr_matrix(adjacency, dtype=np.float64)
    A = ((A + A.T) != 0).astype(np.float64).tocsr()
    A.setdiag(0)
    A.eliminate_zeros()
    n = A.shape[0]
    eye = sparse.identity(n, format="csr", dtype=np.float64)
    visited = eye.copy()
    frontier = eye.copy()
    enc = eye.copy()
    for k in range(1, int(q) + 1):
        nxt = (frontier @ A).tocsr()
        nxt.data[:] = 1.0
        nxt = (nxt - nxt.multiply(visited)).tocsr()
        nxt.eliminate_zeros()
        if nxt.nnz == 0:
            break
        enc = enc + (k + 1) * nxt
        visited = visited + nxt
        frontier = nxt
    return TruncatedDistanceMap(enc, q)


def nearest_in_anchor(v, anchor_set, dmap, radius=2):
    """Closest member of ``anchor_set`` to ``v`` within ``radius`` hops.

    Ties go to the lowest node index. Returns ``None`` when no member is
    close enough.
    """
    nodes, dists = dmap.row(v)
    members = np.asarray(anchor_set)
    inside = np.isin(nodes, members) & (dists <= radius)
    if not inside.any():
        return None
    nodes, dists = nodes[inside], dists[inside]
    order = np.lexsort((nodes, dists))
    return int(nodes[order[0]]), float(dists[order[0]])
