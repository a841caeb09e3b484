"""Estimator interface for TMP-GNN node-layer embeddings."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .autograd import Tensor, no_grad
from .pgnn import FAST, SINGLE, TMPGNN, _families, build_structure, prepare_inputs
from .tasks import CENTERED, MULTIGRAPH_NODE_SPLIT, SINGLE_SUPRAGRAPH, make_split, train_pairwise
from .validation import check_graph, substream

DEFAULT_SCHEME = {"single": SINGLE_SUPRAGRAPH, "multi": MULTIGRAPH_NODE_SPLIT}


class TMPGNNEmbedder(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Position-aware embeddings for every node-layer of a temporal multilayer graph.

    ``fit`` builds the supra-graph inputs and, when community labels are
    available and ``epochs > 0``, trains the network on pairwise node
    classification. ``transform`` returns the supraembedding as an array of
    shape (N, T, d).

    Parameters
    ----------
    input : {"single", "multi"}
        Single supragraph with inter-layer coupling, or one graph per layer.
    scheme : {"supra", "multigraph"}, optional
        Train/val/test split; defaults to ``supra`` for single input and
        ``multigraph`` for multi input.
    n_layers, hidden_dim : int
    embed_dim : int, optional
        Output width; defaults to the number of anchor sets J.
    anchor_copies : int
        ``c`` in ``J = c * ceil(log2 n)``.
    q : int
        Hop cutoff of the truncated distances.
    mode : {"fast", "full"}
    cc_numerator : {"sum", "max"}
        How members near a node are combined in the anchor-set weights.
    resample_anchors : bool
        Draw fresh anchor sets every epoch.
    readout : {"centered", "dot"}
        Pair score: dot product of mean-centered or of raw embeddings.
    seed : int
        Master seed; anchors, initialization, splits and pairs use
        independent named substreams.
    """

    def __init__(self, input=SINGLE, scheme=None, n_layers=2, hidden_dim=16, embed_dim=None,
                 anchor_copies=1, q=2, mode=FAST, cc_numerator="sum", omega="auto",
                 coupling="chain", gamma=None, delta=1, stream=0, intra_only=False,
                 use_features=True, resample_anchors=False, epochs=100, lr=1e-2,
                 n_train_pairs=1000, n_val_pairs=200, n_test_pairs=200, readout=CENTERED,
                 seed=0):
        self.input = input
        self.scheme = scheme
        self.n_layers = n_layers
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.anchor_copies = anchor_copies
        self.q = q
        self.mode = mode
        self.cc_numerator = cc_numerator
        self.omega = omega
        self.coupling = coupling
        self.gamma = gamma
        self.delta = delta
        self.stream = stream
        self.intra_only = intra_only
        self.use_features = use_features
        self.resample_anchors = resample_anchors
        self.epochs = epochs
        self.lr = lr
        self.n_train_pairs = n_train_pairs
        self.n_val_pairs = n_val_pairs
        self.n_test_pairs = n_test_pairs
        self.readout = readout
        self.seed = seed

    def _prepare(self, g, centrality=None):
        return prepare_inputs(
            g, input_kind=self.input, omega=self.omega, coupling=self.coupling,
            gamma=self.gamma, delta=self.delta, stream=self.stream, intra_only=self.intra_only,
            q=self.q, radius=2, mode=self.mode, numerator=self.cc_numerator,
            copies=self.anchor_copies, n_layers=self.n_layers,
            rng=substream(self.seed, "anchors"), centrality=centrality,
            use_features=self.use_features)

    def fit(self, g, y=None):
        check_graph(g)
        self.inputs_ = self._prepare(g)
        self.graph_ = g
        self.num_sets_ = self.inputs_.num_sets
        self.model_ = TMPGNN(self.inputs_.features.shape[1], self.hidden_dim, self.n_layers,
                             self.num_sets_, self.embed_dim, rng=substream(self.seed, "init"))
        self.embedding_dim_ = self.embed_dim or self.num_sets_
        labels = g.node_labels if y is None else np.asarray(y)
        self.metrics_ = None
        if labels is not None and self.epochs > 0:
            scheme = self.scheme or DEFAULT_SCHEME[self.input]
            self.split_ = make_split(g.num_nodes, g.num_layers, scheme,
                                     substream(self.seed, "split"))
            labels_nl = np.tile(labels, g.num_layers)
            anchor_rng = substream(self.seed, "resample")

            def embed():
                if self.resample_anchors:
                    self._resample(anchor_rng)
                return self.model_(self.inputs_.features, self.inputs_.structures)[0]

            self.metrics_ = train_pairwise(
                embed, self.model_.named_parameters(), labels_nl, self.split_,
                epochs=self.epochs, lr=self.lr, n_train_pairs=self.n_train_pairs,
                n_val_pairs=self.n_val_pairs, n_test_pairs=self.n_test_pairs,
                seed=substream(self.seed, "pairs"), readout=self.readout)
        return self

    def _resample(self, rng):
        inp = self.inputs_
        fams, node_family = _families(inp.num_nodes * inp.num_layers, inp.num_nodes,
                                      inp.num_layers, self.input, self.anchor_copies, rng)
        s = build_structure(inp.dmap, fams, node_family, inp.cc, self.mode, 2,
                            self.cc_numerator)
        inp.structures = [s] * self.n_layers
        inp.families = fams

    def _inputs_for(self, g):
        if g is None or g is self.graph_:
            return self.inputs_
        inp = self._prepare(g)
        if inp.num_sets != self.num_sets_:
            raise ValueError("graph size gives a different number of anchor sets than fit")
        return inp

    def forward(self, features=None, g=None):
        """Differentiable ``(z, h)`` tensors over all node-layers, optionally with new features."""
        check_is_fitted(self, "model_")
        inp = self._inputs_for(g)
        x = inp.features if features is None else features
        return self.model_(x, inp.structures)

    def transform(self, g=None):
        check_is_fitted(self, "model_")
        inp = self._inputs_for(g)
        with no_grad():
            z, _ = self.model_(inp.features, inp.structures)
        return to_grid(z.data, inp.num_nodes, inp.num_layers)

    def hidden(self, g=None):
        """Last-layer aggregated hidden state as an (N, T, hidden) array."""
        check_is_fitted(self, "model_")
        inp = self._inputs_for(g)
        with no_grad():
            _, h = self.model_(inp.features, inp.structures)
        return to_grid(h.data, inp.num_nodes, inp.num_layers)


def to_grid(flat, num_nodes, num_layers):
    """(N*T, d) rows indexed ``n + N*t`` -> (N, T, d) supraembedding grid."""
    flat = flat.data if isinstance(flat, Tensor) else np.asarray(flat)
    return flat.reshape(num_layers, num_nodes, -1).transpose(1, 0, 2).copy()
