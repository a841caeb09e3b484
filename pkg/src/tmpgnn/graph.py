"""Temporal multilayer graph container, CSV ingestion and synthetic generation."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .validation import GraphValidationError, check_random_state

MEAN = "mean"


class GraphParseError(ValueError):
    """Raised for malformed rows in an edge or label file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class TemporalMultilayerGraph:
    """Discrete-time multilayer graph on a fixed node set.

    Edges are stored as parallel arrays sorted by ``(layer, src, dst)``.
    For undirected graphs every edge is stored once with ``src <= dst``.

    Parameters
    ----------
    num_nodes, num_layers, num_streams : int
    layer, src, dst : ndarray of int, shape (E,)
    features : ndarray of float, shape (E, num_streams)
    directed : bool
    node_labels : ndarray of int, shape (num_nodes,), optional
        Community id per node, ``-1`` for unlabeled nodes.
    sampling_interval : int
    """

    num_nodes: int
    num_layers: int
    num_streams: int
    layer: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    features: np.ndarray
    directed: bool = True
    node_labels: Optional[np.ndarray] = None
    sampling_interval: int = 1
    _summary_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        layer = np.asarray(self.layer, dtype=np.int64).reshape(-1)
        src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.size == 0:
            feats = feats.reshape(len(layer), self.num_streams)
        if not (len(layer) == len(src) == len(dst) == len(feats)):
            raise GraphValidationError("edge arrays have inconsistent lengths")
        if feats.ndim != 2 or feats.shape[1] != self.num_streams:
            raise GraphValidationError(
                f"features must have shape (E, {self.num_streams}), got {feats.shape}")
        if self.num_nodes < 1 or self.num_layers < 1 or self.num_streams < 0:
            raise GraphValidationError("num_nodes and num_layers must be positive")
        if len(layer):
            if layer.min() < 0 or layer.max() >= self.num_layers:
                raise GraphValidationError("layer index out of range [0, T)")
            for name, arr in (("src", src), ("dst", dst)):
                if arr.min() < 0 or arr.max() >= self.num_nodes:
                    raise GraphValidationError(f"{name} node index out of range [0, N)")
        if not self.directed:
            src, dst = np.minimum(src, dst), np.maximum(src, dst)
        order = np.lexsort((dst, src, layer))
        layer, src, dst, feats = layer[order], src[order], dst[order], feats[order]
        if len(layer) > 1:
            same = ((layer[1:] == layer[:-1]) & (src[1:] == src[:-1])
                    & (dst[1:] == dst[:-1]))
            if same.any():
                i = int(np.flatnonzero(same)[0])
                raise GraphValidationError(
                    f"duplicate edge (t={layer[i]}, u={src[i]}, v={dst[i]})")
        labels = self.node_labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64).reshape(-1)
            if len(labels) != self.num_nodes:
                raise GraphValidationError("node_labels must have one entry per node")
        for arr in (layer, src, dst, feats):
            arr.setflags(write=False)
        object.__setattr__(self, "layer", layer)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "node_labels", labels)

    @property
    def num_edges(self):
        return len(self.layer)

    @property
    def num_node_layers(self):
        return self.num_nodes * self.num_layers

    def node_layer_index(self, node, layer):
        """Linear index ``node + N * layer`` of a node-layer pair."""
        return np.asarray(node) + self.num_nodes * np.asarray(layer)

    def edges_in_layer(self, t):
        sel = self.layer == t
        return self.src[sel], self.dst[sel], self.features[sel]

    def equals(self, other):
        return (
            isinstance(other, TemporalMultilayerGraph)
            and self.num_nodes == other.num_nodes
            and self.num_layers == other.num_layers
            and self.num_streams == other.num_streams
            and self.directed == other.directed
            and self.sampling_interval == other.sampling_interval
            and np.array_equal(self.layer, other.layer)
            and np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.features, other.features)
            and ((self.node_labels is None and other.node_labels is None)
                 or (self.node_labels is not None and other.node_labels is not None
                     and np.array_equal(self.node_labels, other.node_labels)))
        )

    def intra_layer_skeleton(self):
        """Unweighted undirected (NT x NT) adjacency of intra-layer edges."""
        n = self.num_node_layers
        a = self.src + self.num_nodes * self.layer
        b = self.dst + self.num_nodes * self.layer
        keep = a != b
        a, b = a[keep], b[keep]
        data = np.ones(2 * len(a))
        m = sparse.coo_matrix((data, (np.r_[a, b], np.r_[b, a])), shape=(n, n)).tocsr()
        m.data[:] = 1.0
        return m

    def summary(self):
        """Summary counts: nodes, edges, N*T, LLCC and isolated nodes.

        The largest connected component is taken over intra-layer edges of
        the node-layer graph; isolated nodes are everything outside it.
        """
        if not self._summary_cache:
            nt = self.num_node_layers
            _, comp = connected_components(self.intra_layer_skeleton(), directed=False)
            llcc = int(np.bincount(comp).max()) if nt else 0
            self._summary_cache.update({
                "num_nodes": self.num_nodes,
                "num_layers": self.num_layers,
                "num_streams": self.num_streams,
                "num_edges": self.num_edges,
                "node_layers": nt,
                "llcc": llcc,
                "isolated_nodes": nt - llcc,
                "directed": self.directed,
            })
        return dict(self._summary_cache)


def layer_adjacency(g, t, stream=0):
    """Weighted adjacency ``A^(t)`` of one layer as a CSR matrix.

    ``stream`` picks the feature column used as edge weight, or ``"mean"``
    for the arithmetic mean over streams. Undirected graphs give a
    symmetric matrix.
    """
    if not 0 <= t < g.num_layers:
        raise GraphValidationError(f"layer {t} out of range [0, {g.num_layers})")
    src, dst, feats = g.edges_in_layer(t)
    if stream == MEAN:
        w = feats.mean(axis=1) if g.num_streams else np.ones(len(src))
    elif g.num_streams == 0:
        w = np.ones(len(src))
    else:
        if not 0 <= int(stream) < g.num_streams:
            raise GraphValidationError(f"stream {stream} out of range")
        w = feats[:, int(stream)]
    n = g.num_nodes
    if not g.directed:
        off = src != dst
        src, dst, w = np.r_[src, dst[off]], np.r_[dst, src[off]], np.r_[w, w[off]]
    return sparse.csr_matrix((w, (src, dst)), shape=(n, n))


def downsample(g, rate):
    """Keep layers ``0, k, 2k, ...`` and relabel them densely."""
    rate = int(rate)
    if rate < 1:
        raise GraphValidationError("downsampling rate must be >= 1")
    if rate == 1:
        return g
    keep = g.layer % rate == 0
    return TemporalMultilayerGraph(
        num_nodes=g.num_nodes,
        num_layers=-(-g.num_layers // rate),
        num_streams=g.num_streams,
        layer=g.layer[keep] // rate,
        src=g.src[keep],
        dst=g.dst[keep],
        features=g.features[keep],
        directed=g.directed,
        node_labels=g.node_labels,
        sampling_interval=1,
    )


# --------------------------------------------------------------------------
# CSV I/O


def _sidecar(path, suffix):
    root, _ = os.path.splitext(str(path))
    return root + suffix


def save_graph(g, path):
    """Write ``layer,src,dst,f_0..`` CSV plus labels and metadata sidecars."""
    path = str(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "src", "dst"] + [f"f_{d}" for d in range(g.num_streams)])
        for t, u, v, x in zip(g.layer, g.src, g.dst, g.features):
            w.writerow([int(t), int(u), int(v)] + [repr(float(val)) for val in x])
    if g.node_labels is not None:
        with open(_sidecar(path, ".labels.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "community"])
            for node, c in enumerate(g.node_labels):
                if c >= 0:
                    w.writerow([node, int(c)])
    meta = {
        "num_nodes": g.num_nodes,
        "num_layers": g.num_layers,
        "num_streams": g.num_streams,
        "directed": g.directed,
        "sampling_interval": g.sampling_interval,
    }
    with open(_sidecar(path, ".meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    return path


def _parse_int(token, line, what):
    try:
        return int(token)
    except ValueError:
        raise GraphParseError(f"{what} is not an integer: {token!r}", line) from None


def load_labels(path, num_nodes):
    labels = np.full(num_nodes, -1, dtype=np.int64)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["node", "community"]:
            raise GraphParseError("labels file needs header 'node,community'", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise GraphParseError("expected 2 columns", lineno)
            node = _parse_int(row[0], lineno, "node")
            comm = _parse_int(row[1], lineno, "community")
            if not 0 <= node < num_nodes:
                raise GraphValidationError(f"line {lineno}: node {node} out of range")
            labels[node] = comm
    return labels


def load_graph(path, num_nodes=None, num_layers=None, num_streams=None,
               directed=None, labels_path=None):
    """Read an edge-list CSV into a :class:`TemporalMultilayerGraph`.

    The file must start with a ``layer,src,dst,f_0,...`` header. Counts not
    given explicitly come from a ``.meta.json`` sidecar when one exists and
    are otherwise inferred from the largest index seen. A ``.labels.csv``
    sidecar is picked up automatically.
    """
    path = str(path)
    meta = {}
    meta_path = _sidecar(path, ".meta.json")
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)

    rows_t, rows_u, rows_v, rows_x = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise GraphParseError("missing header row", 1)
        header = [h.strip() for h in header]
        if header[:3] != ["layer", "src", "dst"]:
            raise GraphParseError("header must start with 'layer,src,dst'", 1)
        expected = [f"f_{d}" for d in range(len(header) - 3)]
        if header[3:] != expected:
            raise GraphParseError("feature columns must be named f_0..f_{D-1}", 1)
        n_streams = len(header) - 3
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise GraphParseError(f"expected {len(header)} columns, got {len(row)}", lineno)
            rows_t.append(_parse_int(row[0], lineno, "layer"))
            rows_u.append(_parse_int(row[1], lineno, "src"))
            rows_v.append(_parse_int(row[2], lineno, "dst"))
            try:
                rows_x.append([float(tok) for tok in row[3:]])
            except ValueError:
                raise GraphParseError("feature value is not a number", lineno) from None

    if num_streams is not None and num_streams != n_streams:
        raise GraphValidationError(f"file has {n_streams} streams, expected {num_streams}")
    if num_nodes is None:
        num_nodes = meta.get("num_nodes")
    if num_nodes is None:
        num_nodes = max(max(rows_u, default=0), max(rows_v, default=0)) + 1
    if num_layers is None:
        num_layers = meta.get("num_layers")
    if num_layers is None:
        num_layers = max(rows_t, default=0) + 1
    if directed is None:
        directed = meta.get("directed", True)
    if rows_t:
        bad = [i for i, t in enumerate(rows_t) if not 0 <= t < num_layers]
        bad += [i for i, (u, v) in enumerate(zip(rows_u, rows_v))
                if not (0 <= u < num_nodes and 0 <= v < num_nodes)]
        if bad:
            i = min(bad)
            raise GraphValidationError(f"line {i + 2}: index out of range")

    labels = None
    if labels_path is None and os.path.exists(_sidecar(path, ".labels.csv")):
        labels_path = _sidecar(path, ".labels.csv")
    if labels_path is not None:
        labels = load_labels(labels_path, num_nodes)

    return TemporalMultilayerGraph(
        num_nodes=int(num_nodes),
        num_layers=int(num_layers),
        num_streams=n_streams,
        layer=np.array(rows_t, dtype=np.int64),
        src=np.array(rows_u, dtype=np.int64),
        dst=np.array(rows_v, dtype=np.int64),
        features=np.array(rows_x, dtype=np.float64).reshape(len(rows_t), n_streams),
        directed=bool(directed),
        node_labels=labels,
        sampling_interval=int(meta.get("sampling_interval", 1)),
    )


# --------------------------------------------------------------------------
# Synthetic generator


@dataclass
class SynthConfig:
    """Parameters of the synthetic SBM-with-rewiring generator.

    ``community_signal`` in [0, 1] blends a per-community latent series into
    every edge stream; at 0 the stream values carry no label information.
    ``shared_noise`` is the scale of community-level shocks that are common
    to all edges of a community at one layer.
    """

    num_nodes: int = 30
    num_layers: int = 10
    num_streams: int = 2
    communities: int = 2
    p_in: float = 0.3
    p_out: float = 0.05
    rewire: float = 0.1
    signal: str = "sinusoid"
    period: float = 8.0
    ar_coef: float = 0.8
    community_signal: float = 1.0
    shared_noise: float = 0.05
    noise: float = 0.02
    directed: bool = False
    seed: int = 0

    def validate(self):
        if self.num_nodes < 1 or self.num_layers < 1 or self.num_streams < 0:
            raise GraphValidationError("N, T must be >= 1 and D >= 0")
        if not 1 <= self.communities <= self.num_nodes:
            raise GraphValidationError("need 1 <= K <= N")
        if not 0 <= self.p_out <= self.p_in <= 1:
            raise GraphValidationError("need 0 <= p_out <= p_in <= 1")
        if not 0 <= self.rewire <= 1:
            raise GraphValidationError("rewire probability must lie in [0, 1]")
        if self.signal not in ("sinusoid", "ar1"):
            raise GraphValidationError(f"unknown signal model {self.signal!r}")
        if not 0 <= self.community_signal <= 1:
            raise GraphValidationError("community_signal must lie in [0, 1]")


def _community_series(cfg, rng, n_series):
    """Latent series in [0, 1] of shape (n_series, D, T)."""
    T, D = cfg.num_layers, cfg.num_streams
    t = np.arange(T)
    if cfg.signal == "sinusoid":
        phase = rng.uniform(0, 2 * np.pi, size=(n_series, D, 1))
        amp = rng.uniform(0.15, 0.3, size=(n_series, D, 1))
        level = rng.uniform(0.35, 0.65, size=(n_series, D, 1))
        out = level + amp * np.sin(2 * np.pi * t / cfg.period + phase)
    else:
        level = rng.uniform(0.35, 0.65, size=(n_series, D))
        out = np.empty((n_series, D, T))
        x = level + rng.normal(0, 0.1, size=(n_series, D))
        for k in range(T):
            x = level + cfg.ar_coef * (x - level) + rng.normal(0, 0.08, size=(n_series, D))
            out[:, :, k] = x
    return out


def synth_graph(cfg):
    """Generate a labeled temporal multilayer graph from an SBM.

    Layer 0 is drawn from a K-block stochastic block model with balanced
    contiguous communities. Each following layer rewires every edge of the
    previous one with probability ``rewire``, keeping its source and drawing
    a new endpoint with SBM-proportional probabilities. Stream values mix a
    per-community latent series with a per-edge series, plus noise, and are
    clipped to [0, 1].
    """
    cfg.validate()
    rng = check_random_state(cfg.seed)
    N, T, D, K = cfg.num_nodes, cfg.num_layers, cfg.num_streams, cfg.communities
    labels = (np.arange(N) * K) // N
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, cfg.p_in, cfg.p_out)
    np.fill_diagonal(prob, 0.0)

    draw = rng.random((N, N)) < prob
    if cfg.directed:
        edges = set(zip(*np.nonzero(draw)))
    else:
        edges = set(zip(*np.nonzero(np.triu(draw, 1))))
    layers = [sorted((int(u), int(v)) for u, v in edges)]
    for _ in range(1, T):
        current = set(layers[-1])
        nxt = set()
        for u, v in layers[-1]:
            if rng.random() >= cfg.rewire:
                nxt.add((u, v))
                continue
            w = prob[u].copy()
            for cand in range(N):
                key = (u, cand) if cfg.directed else (min(u, cand), max(u, cand))
                if key in current or key in nxt:
                    w[cand] = 0.0
            if w.sum() <= 0:
                nxt.add((u, v))
                continue
            cand = int(rng.choice(N, p=w / w.sum()))
            nxt.add((u, cand) if cfg.directed else (min(u, cand), max(u, cand)))
        layers.append(sorted(nxt))

    comm_series = _community_series(cfg, rng, K)
    shocks = rng.normal(0, cfg.shared_noise, size=(K, D, T)) if D else np.zeros((K, 0, T))
    edge_series = {}
    lt, lu, lv, lx = [], [], [], []
    for t, edge_list in enumerate(layers):
        for u, v in edge_list:
            if (u, v) not in edge_series:
                edge_series[(u, v)] = _community_series(cfg, rng, 1)[0]
            c = labels[u]
            base = (cfg.community_signal * comm_series[c, :, t]
                    + (1 - cfg.community_signal) * edge_series[(u, v)][:, t])
            x = base + shocks[c, :, t] + rng.normal(0, cfg.noise, size=D)
            lt.append(t)
            lu.append(u)
            lv.append(v)
            lx.append(np.clip(x, 0.0, 1.0))
    return TemporalMultilayerGraph(
        num_nodes=N,
        num_layers=T,
        num_streams=D,
        layer=np.array(lt, dtype=np.int64),
        src=np.array(lu, dtype=np.int64),
        dst=np.array(lv, dtype=np.int64),
        features=np.array(lx, dtype=np.float64).reshape(len(lt), D),
        directed=cfg.directed,
        node_labels=labels,
    )
