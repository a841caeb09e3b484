"""Position-aware message passing over anchor sets on the supra-graph.

One layer, for node ``v`` and anchor set ``R_j``:

* attention over the members of ``R_j`` near ``v`` gives a context vector
  ``c`` and ``a = Wc [c ; h_v]``;
* the message from a member ``u`` is ``a / (d(u, v) + 1)`` and the messages
  of one set are averaged into ``M_v[j]``;
* ``h_v = (1/J) sum_j r_j M_v[j]`` where ``r_j`` is proportional to the
  stationary conditional centrality of the set's members near ``v``;
* the position-aware output is ``z_v = sigmoid(M_v w)``, one entry per set.

All node/set/member relations are precomputed into flat index arrays so a
forward pass is a handful of gathers and scatter-adds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .anchors import AnchorSetFamily, sample_anchor_sets, supra_skeleton, truncated_distances
from .autograd import (Tensor, as_tensor, concat, exp, matmul, parameter, relu, segment_sum,
                       sigmoid, softmax, take, tanh)
from .nn import Linear, Module, _uniform
from .spectral import SupraCentrality, flatten_node_layers, layerwise_cc
from .validation import check_random_state

FAST = "fast"
FULL = "full"


# --------------------------------------------------------------------------
# single-node reference operations


def attention_coeff(h_v, neighbors, W1, W2, V, Wc, bc=None):
    """Additive attention of ``h_v`` over neighbor rows.

    Works on arrays or tensors. Returns ``(alpha, context, a_v)`` with
    ``alpha = softmax_u(V . tanh(W1 h_v + W2 h_u))``,
    ``context = sum_u alpha_u h_u`` and ``a_v = Wc [context ; h_v] (+ bc)``.
    """
    h_v, neighbors = as_tensor(h_v), as_tensor(neighbors)
    if neighbors.ndim != 2 or neighbors.shape[0] == 0:
        raise ValueError("attention needs at least one neighbor")
    scores = matmul(tanh(matmul(h_v, as_tensor(W1)) + matmul(neighbors, as_tensor(W2))),
                    as_tensor(V))
    alpha = softmax(scores, axis=0)
    context = matmul(alpha, neighbors)
    a_v = matmul(concat([context, h_v], axis=-1), as_tensor(Wc))
    if bc is not None:
        a_v = a_v + as_tensor(bc)
    return alpha, context, a_v


def message_F(a_v, distance):
    """Distance-damped message ``a_v / (d + 1)``; zero beyond the hop cutoff."""
    a_v = np.asarray(a_v, dtype=np.float64)
    if not math.isfinite(distance):
        return np.zeros_like(a_v)
    return a_v / (distance + 1.0)


def agg_m(messages):
    """Mean of the messages computed for one anchor set, or ``None`` if there are none."""
    messages = [np.asarray(m, dtype=np.float64) for m in messages]
    if not messages:
        return None
    return np.mean(messages, axis=0)


def anchor_weights(hit_centralities, numerator="sum"):
    """Normalized ``r_j`` from the centralities of each set's members near ``v``.

    ``hit_centralities[j]`` lists the stationary CC of members of ``R_j``
    within two hops of ``v`` (empty if the set does not qualify). Returns
    zeros for non-qualifying sets, or ``None`` if no set qualifies.
    """
    num = np.array([
        (np.sum(c) if numerator == "sum" else np.max(c)) if len(c) else 0.0
        for c in hit_centralities
    ], dtype=np.float64)
    total = num.sum()
    if total <= 0:
        return None
    return num / total


def agg_r(M, r, J=None):
    """``(1/J) sum_j r_j M[j]`` over the rows of ``M``; missing rows count as zero."""
    M = np.asarray(M, dtype=np.float64)
    J = len(M) if J is None else J
    return (np.asarray(r)[:, None] * M).sum(axis=0) / J


def edge_embedding(z_u, z_v):
    """Edge embedding as the mean of its endpoint embeddings."""
    if isinstance(z_u, Tensor) or isinstance(z_v, Tensor):
        return (as_tensor(z_u) + as_tensor(z_v)) * 0.5
    return 0.5 * (np.asarray(z_u) + np.asarray(z_v))


# --------------------------------------------------------------------------
# precomputed structure


@dataclass(frozen=True)
class PgnnStructure:
    """Flat index arrays describing which anchor members talk to which node.

    A *group* is a (node, set) pair with at least one message; *members*
    are the anchor nodes attended over inside a group.
    """

    num_nodes: int
    num_sets: int
    group_node: np.ndarray
    group_set: np.ndarray
    group_scale: np.ndarray
    group_weight: np.ndarray
    member_group: np.ndarray
    member_node: np.ndarray

    @property
    def num_groups(self):
        return len(self.group_node)


def build_structure(dmap, families: Sequence[AnchorSetFamily], node_family, cc,
                    mode=FAST, radius=2, numerator="sum"):
    """Index arrays for one message-passing layer.

    Parameters
    ----------
    dmap : TruncatedDistanceMap
    families : list of AnchorSetFamily
        Anchor families; node ``v`` uses ``families[node_family[v]]``. All
        families must have the same number of sets.
    cc : ndarray of shape (n,)
        Stationary conditional centrality of each node, used for ``r_j``.
    mode : {"fast", "full"}
        ``fast`` sends one message per set, from the nearest member within
        ``radius`` hops (ties to the lowest index), and attends over the
        members within ``radius``. ``full`` sends and attends over every
        member within the distance map's cutoff.
    """
    n = dmap.num_nodes
    node_family = np.asarray(node_family, dtype=np.int64)
    J = len(families[0])
    if any(len(f) != J for f in families):
        raise ValueError("all anchor families must have the same number of sets")
    if mode not in (FAST, FULL):
        raise ValueError(f"unknown mode {mode!r}")
    cc = np.asarray(cc, dtype=np.float64)

    pv, pu, pd = dmap.pairs(radius if mode == FAST else None)
    rows_v, rows_j, rows_u, rows_d = [], [], [], []
    for f, fam in enumerate(families):
        sel = node_family[pv] == f
        if not sel.any():
            continue
        set_of = [[] for _ in range(n)]
        for j, members in enumerate(fam.sets):
            for u in members:
                set_of[u].append(j)
        counts = np.array([len(set_of[u]) for u in pu[sel]], dtype=np.int64)
        if counts.sum() == 0:
            continue
        rows_v.append(np.repeat(pv[sel], counts))
        rows_u.append(np.repeat(pu[sel], counts))
        rows_d.append(np.repeat(pd[sel], counts))
        rows_j.append(np.fromiter((j for u in pu[sel] for j in set_of[u]), dtype=np.int64,
                                  count=int(counts.sum())))
    if not rows_v:
        empty_i, empty_f = np.zeros(0, np.int64), np.zeros(0)
        return PgnnStructure(n, J, empty_i, empty_i, empty_f, empty_f, empty_i, empty_i)
    v = np.concatenate(rows_v)
    j = np.concatenate(rows_j)
    u = np.concatenate(rows_u)
    d = np.concatenate(rows_d)

    order = np.lexsort((u, d, j, v))
    v, j, u, d = v[order], j[order], u[order], d[order]
    key = v * J + j
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    group_of = np.cumsum(np.r_[False, key[1:] != key[:-1]])
    group_node, group_set = v[starts], j[starts]
    G = len(starts)

    if mode == FAST:
        # rows are sorted by distance then node id inside each group
        group_scale = 1.0 / (d[starts] + 1.0)
    else:
        group_scale = np.bincount(group_of, weights=1.0 / (d + 1.0), minlength=G)
        group_scale /= np.bincount(group_of, minlength=G)

    near = d <= radius
    if numerator == "sum":
        num = np.bincount(group_of[near], weights=cc[u[near]], minlength=G)
    elif numerator == "max":
        num = np.zeros(G)
        np.maximum.at(num, group_of[near], cc[u[near]])
    else:
        raise ValueError(f"unknown numerator {numerator!r}")
    total = np.bincount(group_node, weights=num, minlength=n)
    n_groups = np.bincount(group_node, minlength=n)
    weight = np.where(total[group_node] > 0,
                      num / np.where(total[group_node] > 0, total[group_node], 1.0),
                      1.0 / np.maximum(n_groups[group_node], 1))
    return PgnnStructure(n, J, group_node, group_set, group_scale, weight,
                         group_of.astype(np.int64), u)


# --------------------------------------------------------------------------
# layers and model


class PgnnLayer(Module):
    def __init__(self, in_dim, out_dim, attn_dim=None, rng=None):
        rng = check_random_state(rng)
        attn_dim = attn_dim or out_dim
        self.in_dim, self.out_dim = in_dim, out_dim
        self.W1 = parameter(_uniform(rng, in_dim, (in_dim, attn_dim)))
        self.W2 = parameter(_uniform(rng, in_dim, (in_dim, attn_dim)))
        self.V = parameter(_uniform(rng, attn_dim, (attn_dim,)))
        self.combine = Linear(2 * in_dim, out_dim, rng=rng)
        self.w = parameter(_uniform(rng, out_dim, (out_dim,)))

    def forward(self, h, s: PgnnStructure):
        """Returns ``(h_out, position)`` with shapes (n, out) and (n, J)."""
        n, J = s.num_nodes, s.num_sets
        G = s.num_groups
        if G == 0:
            return Tensor(np.zeros((n, self.out_dim))), Tensor(np.zeros((n, J)))
        hv_proj = take(matmul(h, self.W1), s.group_node[s.member_group])
        hu = take(h, s.member_node)
        scores = matmul(tanh(hv_proj + matmul(hu, self.W2)), self.V)
        shift = np.full(G, -np.inf)
        np.maximum.at(shift, s.member_group, scores.data)
        e = exp(scores - shift[s.member_group])
        denom = segment_sum(e, s.member_group, G)
        alpha = e / take(denom, s.member_group)
        context = segment_sum(alpha.reshape(-1, 1) * hu, s.member_group, G)
        a = self.combine(concat([context, take(h, s.group_node)], axis=-1))
        M = a * s.group_scale.reshape(-1, 1)
        h_out = segment_sum(M * (s.group_weight / J).reshape(-1, 1), s.group_node, n)
        pos = segment_sum(matmul(M, self.w).reshape(-1, 1), s.group_node * J + s.group_set,
                          n * J).reshape(n, J)
        return h_out, pos


class TMPGNN(Module):
    """Stack of position-aware layers with ReLU between them.

    ``forward`` returns ``(z, h)``: the sigmoid position-aware embedding of
    the last layer (shape (n, J), or (n, embed_dim) through a bias-free
    projection) and the last layer's aggregated hidden state (n, hidden).
    """

    def __init__(self, in_dim, hidden_dim=16, n_layers=2, num_sets=None, embed_dim=None,
                 rng=None):
        rng = check_random_state(rng)
        if n_layers < 1:
            raise ValueError("need at least one layer")
        dims = [in_dim] + [hidden_dim] * n_layers
        self.layers = [PgnnLayer(a, b, rng=rng) for a, b in zip(dims[:-1], dims[1:])]
        self.hidden_dim = hidden_dim
        self.num_sets = num_sets
        self.embed_dim = embed_dim
        self.proj = None
        if embed_dim is not None and num_sets is not None and embed_dim != num_sets:
            self.proj = parameter(_uniform(rng, num_sets, (num_sets, embed_dim)))

    def forward(self, x, structures):
        if isinstance(structures, PgnnStructure):
            structures = [structures] * len(self.layers)
        h = as_tensor(x)
        pos = None
        for k, (layer, s) in enumerate(zip(self.layers, structures)):
            h, pos = layer(h, s)
            if k < len(self.layers) - 1:
                h = relu(h)
        if self.proj is not None:
            pos = matmul(pos, self.proj)
        return sigmoid(pos), h


# --------------------------------------------------------------------------
# graph -> model inputs

SINGLE = "single"
MULTI = "multi"


def node_features(num_nodes, num_layers, layer, src, dst, values, observed=None, cc=None):
    """Per node-layer input features, shape (N*T, D + 1).

    Column ``d`` is the mean of stream ``d`` over observed incident edges at
    that layer (0 if none); the last column is ``N * cc`` (so it averages to
    one). With no streams and no centrality the features are a constant 1.
    """
    n = num_nodes * num_layers
    values = np.asarray(values, dtype=np.float64).reshape(len(layer), -1)
    D = values.shape[1]
    obs = np.ones_like(values) if observed is None else np.asarray(observed, dtype=np.float64)
    a = np.asarray(src) + num_nodes * np.asarray(layer)
    b = np.asarray(dst) + num_nodes * np.asarray(layer)
    sums = np.zeros((n, D))
    cnts = np.zeros((n, D))
    np.add.at(sums, a, values * obs)
    np.add.at(cnts, a, obs)
    loop = a != b
    np.add.at(sums, b[loop], (values * obs)[loop])
    np.add.at(cnts, b[loop], obs[loop])
    means = np.divide(sums, cnts, out=np.zeros_like(sums), where=cnts > 0)
    cols = [means]
    if cc is not None:
        cols.append(num_nodes * np.asarray(cc, dtype=np.float64).reshape(n, 1))
    out = np.concatenate(cols, axis=1)
    if out.shape[1] == 0:
        out = np.ones((n, 1))
    return out


def standardize_columns(x):
    """Z-score each column; constant columns are only centered."""
    x = np.asarray(x, dtype=np.float64)
    sd = x.std(axis=0)
    return (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


@dataclass
class PgnnInputs:
    """Everything a forward pass needs for one graph."""

    num_nodes: int
    num_layers: int
    structures: list
    features: np.ndarray
    cc: np.ndarray
    families: list
    node_family: np.ndarray
    dmap: object
    omega: Optional[float]

    @property
    def num_sets(self):
        return self.structures[0].num_sets


def _families(n_total, N, T, input_kind, copies, rng):
    if input_kind == SINGLE:
        return [sample_anchor_sets(n_total, copies, rng)], np.zeros(n_total, np.int64)
    fams = []
    for t in range(T):
        base = sample_anchor_sets(N, copies, rng)
        fams.append(AnchorSetFamily(tuple(s + N * t for s in base.sets), n_total, copies,
                                    base.scales, None))
    return fams, np.repeat(np.arange(T), N)


def prepare_inputs(g, input_kind=SINGLE, omega="auto", coupling="chain", gamma=None, delta=1,
                   stream=0, intra_only=False, q=2, radius=2, mode=FAST, numerator="sum",
                   copies=1, n_layers=2, rng=None,
                   centrality=None, use_features=True):
    """Centralities, distance map, anchor sets and features for a graph.

    ``input_kind="single"`` treats the whole supra-graph as one graph with
    inter-layer chain edges and node-level stationary CC. ``"multi"`` treats
    each layer as its own graph: no inter-layer edges, anchor sets drawn
    per layer and per-layer eigenvector centrality.
    """
    rng = check_random_state(rng)
    N, T = g.num_nodes, g.num_layers
    n = N * T
    if input_kind == SINGLE:
        if centrality is None:
            centrality = SupraCentrality(omega=omega, coupling=coupling, gamma=gamma,
                                         delta=delta, stream=stream).fit(g)
        cc_node = np.tile(centrality.stationary_cc_, T)
        skel = supra_skeleton(g, delta, intra_only)
        omega_used = centrality.omega_
    elif input_kind == MULTI:
        cc_node = flatten_node_layers(layerwise_cc(g, stream))
        skel = g.intra_layer_skeleton()
        omega_used = None
    else:
        raise ValueError(f"unknown input kind {input_kind!r}")
    dmap = truncated_distances(skel, max(q, radius))
    fams, node_family = _families(n, N, T, input_kind, copies, rng)
    structures = [build_structure(dmap, fams, node_family, cc_node, mode, radius,
                                  numerator)] * n_layers
    if use_features:
        feats = standardize_columns(
            node_features(N, T, g.layer, g.src, g.dst, g.features, cc=cc_node))
    else:
        feats = np.ones((n, 1))
    return PgnnInputs(N, T, structures, feats, cc_node, fams, node_family, dmap, omega_used)
