"""Missing edge-feature estimation with bidirectional GRUs.

Every unique edge (node pair) of a temporal multilayer graph carries a
D-stream series over the T layers. A :class:`MaskedSeries` stores the
values ``Z`` (zero where unobserved), the observation mask ``M`` and the
time-gap array ``Delta``, shaped (E, D, T).

Three estimators share one training loop:

* ``mrnn``: bi-GRU over ``(Z, M, Delta)``, a per-stream interpolation head
  ``x~ = sigmoid(S h + a0)`` and a fully connected layer across streams
  ``x^ = sigmoid(U x~ + b)``.
* ``etmpgnn1``: the same network with the d TMP-GNN edge-embedding
  coordinates appended as extra, always-observed input streams.
* ``etmpgnn2``: the TMP-GNN hidden state of the edge is squashed to the
  bi-GRU width and mixed with the bi-GRU state through two softmax
  weights before the interpolation and output heads.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .autograd import Tensor, concat, no_grad, parameter, sigmoid, softmax, take
from .graph import TemporalMultilayerGraph
from .nn import Adam, BiGRU, Linear, Module
from .pgnn import FAST, SINGLE, TMPGNN, node_features, prepare_inputs, standardize_columns
from .tasks import relative_improvement
from .validation import check_graph, check_probability, check_random_state, substream

ARCH_MRNN = "mrnn"
ARCH_ETMPGNN1 = "etmpgnn1"
ARCH_ETMPGNN2 = "etmpgnn2"
ARCHITECTURES = (ARCH_MRNN, ARCH_ETMPGNN1, ARCH_ETMPGNN2)


# --------------------------------------------------------------------------
# masked series


def delta_array(mask):
    """Time gaps since the previous observation along the last axis.

    ``Delta[0] = 0``; ``Delta[t] = 1`` if ``mask[t-1]`` is observed, else
    ``Delta[t-1] + 1``.
    """
    mask = np.asarray(mask)
    out = np.zeros(mask.shape, dtype=np.float64)
    for t in range(1, mask.shape[-1]):
        out[..., t] = np.where(mask[..., t - 1] > 0, 1.0, out[..., t - 1] + 1.0)
    return out


@dataclass(frozen=True)
class MaskedSeries:
    """Per-edge stream series with an observation mask.

    Attributes
    ----------
    pairs : ndarray of shape (E, 2)
        Endpoints of each unique edge.
    values : ndarray of shape (E, D, T)
        ``Z``: observed values, zero wherever ``mask`` is 0.
    mask : ndarray of shape (E, D, T)
        ``M``: 1 where the value is observed.
    delta : ndarray of shape (E, D, T)
    present : ndarray of shape (E, T)
        Whether the edge exists at each layer.
    removed : ndarray of shape (E, D, T)
        Cells withheld from the model whose true value is known.
    truth : ndarray of shape (E, D, T)
        Withheld values at ``removed`` cells, zero elsewhere.
    """

    num_nodes: int
    num_layers: int
    pairs: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    delta: np.ndarray
    present: np.ndarray
    removed: np.ndarray
    truth: np.ndarray

    @property
    def num_edges(self):
        return len(self.pairs)

    @property
    def num_streams(self):
        return self.values.shape[1]

    def hide(self, cells):
        """A copy with extra observed ``cells`` turned unobserved (not marked as removed)."""
        cells = np.asarray(cells, dtype=bool) & (self.mask > 0)
        mask = np.where(cells, 0.0, self.mask)
        return replace(self, values=self.values * mask, mask=mask, delta=delta_array(mask))

    def layer_entries(self, mask=None):
        """Flat (layer, src, dst, values, observed) arrays for edges present at a layer."""
        mask = self.mask if mask is None else mask
        e, t = np.nonzero(self.present)
        vals = (self.values * mask)[e, :, t]
        return t, self.pairs[e, 0], self.pairs[e, 1], vals, mask[e, :, t]


def edge_series(g):
    """Unique edges of ``g`` and their (E, D, T) series with an (E, T) presence array."""
    check_graph(g)
    key = g.src * g.num_nodes + g.dst
    uniq, inv = np.unique(key, return_inverse=True)
    pairs = np.stack([uniq // g.num_nodes, uniq % g.num_nodes], axis=1).astype(np.int64)
    E, D, T = len(uniq), g.num_streams, g.num_layers
    X = np.zeros((E, D, T))
    present = np.zeros((E, T), dtype=bool)
    X[inv, :, g.layer] = g.features
    present[inv, g.layer] = True
    return pairs, X, present


def mask_remove(g, tau, seed=None):
    """Withhold each observed (edge, stream, layer) cell independently with probability ``tau``.

    Cells of edges absent from a layer are unobserved and carry no ground
    truth.
    """
    if not 0.0 < float(tau) < 1.0:
        raise ValueError(f"missing threshold tau must lie in (0, 1), got {tau}")
    rng = check_random_state(seed)
    pairs, X, present = edge_series(g)
    observed = np.broadcast_to(present[:, None, :], X.shape)
    removed = observed & (rng.random(X.shape) < tau)
    mask = (observed & ~removed).astype(np.float64)
    return MaskedSeries(g.num_nodes, g.num_layers, pairs, X * mask, mask, delta_array(mask),
                        present, removed, np.where(removed, X, 0.0))


def split_removed(series, seed=None, val_fraction=0.5):
    """Split the removed cells into validation and test parts.

    Each cell draws one uniform number and joins the validation part when
    it falls below ``val_fraction``. The draw covers the whole cell grid, so
    with a shared seed the parts of nested removal masks are nested too.
    Both parts are kept non-empty whenever there are at least two cells.
    """
    rng = check_random_state(seed)
    removed = np.asarray(series.removed, dtype=bool)
    if not removed.any():
        raise ValueError("no removed cells to evaluate on")
    u = rng.random(removed.shape)
    val = removed & (u < val_fraction)
    test = removed & ~val
    if removed.sum() > 1 and not (val.any() and test.any()):
        # move the cell whose draw lies closest to the threshold
        donor = val if val.any() else test
        cell = np.unravel_index(np.argmin(np.where(donor, np.abs(u - val_fraction), np.inf)),
                                u.shape)
        val[cell] = not val[cell]
        test[cell] = not test[cell]
    return val, test


def _time_major(arr):
    """(E, S, T) -> (T, E, S)."""
    return np.ascontiguousarray(np.transpose(arr, (2, 0, 1)))


# --------------------------------------------------------------------------
# architectures


def _identity_linear(width, rng):
    """Square layer started at the identity.

    The cross-stream layer follows a sigmoid, so with a random start a
    wrongly signed diagonal pushes the initial estimates away from their
    targets until that sigmoid saturates and training stalls at the mean.
    """
    layer = Linear(width, width, rng=rng)
    layer.weight.data = np.eye(width)
    return layer


class MRNN(Module):
    """Bi-GRU interpolation followed by a fully connected imputation layer.

    Parameters
    ----------
    num_streams : int
        Number of input streams S; each contributes value, mask and gap.
    hidden_size : int
        Width H of each GRU direction.
    out_streams : int, optional
        Number of estimated streams; defaults to ``num_streams``.
    """

    def __init__(self, num_streams, hidden_size=16, out_streams=None, rng=None):
        rng = check_random_state(rng)
        self.num_streams = num_streams
        self.out_streams = num_streams if out_streams is None else out_streams
        self.hidden_size = hidden_size
        self.bigru = BiGRU(3 * num_streams, hidden_size, rng)
        self.interp = Linear(2 * hidden_size, self.out_streams, rng=rng)
        self.fc = _identity_linear(self.out_streams, rng)

    def forward(self, values, mask, delta):
        """Inputs of shape (T, E, S); returns estimates of shape (T, E, out_streams)."""
        xs = concat([values, mask, delta], axis=-1)
        if xs.shape[-1] != 3 * self.num_streams:
            raise ValueError(f"expected {self.num_streams} input streams, got {xs.shape[-1] // 3}")
        h = self.bigru(xs)
        initial = sigmoid(self.interp(h))
        return sigmoid(self.fc(initial))


class ETMPGNN1(MRNN):
    """M-RNN whose inputs are the D data streams plus d embedding streams."""

    def __init__(self, num_streams, embed_dim, hidden_size=16, rng=None):
        super().__init__(num_streams + embed_dim, hidden_size, out_streams=num_streams, rng=rng)
        self.embed_dim = embed_dim

    def forward(self, values, mask, delta, embedding=None):
        if self.embed_dim:
            if embedding is None or embedding.shape[-1] != self.embed_dim:
                raise ValueError(f"expected edge embeddings of width {self.embed_dim}")
            ones = np.ones(embedding.shape)
            gap = np.ones(embedding.shape)
            gap[0] = 0.0
            values = concat([values, embedding], axis=-1)
            mask = concat([mask, ones], axis=-1)
            delta = concat([delta, gap], axis=-1)
        return super().forward(values, mask, delta)


class ETMPGNN2(Module):
    """Bi-GRU state mixed with a squashed TMP-GNN state through softmax weights.

    ``h' = sigmoid(h_tmp Wp + bp)`` has the bi-GRU width ``2H``. With
    ``(a_p, a_b) = softmax(mix)``, ``h_pgb = a_p h' + a_b h_bigru``; the
    initial estimate is ``x~ = sigmoid(h_pgb S + a0)`` and the output is
    ``x^ = sigmoid(h_pgb w + x~ U + b)``.

    ``mix="unit"`` learns one pair of mixing logits per hidden unit.
    """

    def __init__(self, num_streams, tmp_dim, hidden_size=16, mix="scalar", rng=None):
        rng = check_random_state(rng)
        if mix not in ("scalar", "unit"):
            raise ValueError(f"unknown mix {mix!r}")
        self.num_streams = num_streams
        self.tmp_dim = tmp_dim
        self.hidden_size = hidden_size
        self.bigru = BiGRU(3 * num_streams, hidden_size, rng)
        self.proj = Linear(tmp_dim, 2 * hidden_size, rng=rng)
        self.mix = parameter(np.zeros((2,) if mix == "scalar" else (2, 2 * hidden_size)))
        self.interp = Linear(2 * hidden_size, num_streams, rng=rng)
        self.head = Linear(2 * hidden_size, num_streams, bias=False, rng=rng)
        self.fc = _identity_linear(num_streams, rng)

    def mix_weights(self):
        return softmax(self.mix, axis=0)

    def forward(self, values, mask, delta, tmp_hidden):
        h_bigru = self.bigru(concat([values, mask, delta], axis=-1))
        if tmp_hidden.shape[-1] != self.tmp_dim:
            raise ValueError(f"expected TMP-GNN hidden width {self.tmp_dim}, "
                             f"got {tmp_hidden.shape[-1]}")
        h_tmp = sigmoid(self.proj(tmp_hidden))
        if h_tmp.shape[-1] != h_bigru.shape[-1]:
            raise ValueError("projected TMP-GNN state does not match the bi-GRU width")
        w = self.mix_weights()
        h_pgb = w[0] * h_tmp + w[1] * h_bigru
        initial = sigmoid(self.interp(h_pgb))
        return sigmoid(self.head(h_pgb) + self.fc(initial))


# --------------------------------------------------------------------------
# edge-level TMP-GNN quantities


def structure_only(g):
    """The same edges as ``g`` with every stream value dropped."""
    return TemporalMultilayerGraph(g.num_nodes, g.num_layers, 0, g.layer, g.src, g.dst,
                                   np.zeros((g.num_edges, 0)), directed=g.directed,
                                   node_labels=g.node_labels)


def edge_node_index(series):
    """(T, E, 2) supra-node indices ``n + N*t`` of each edge's endpoints."""
    t = np.arange(series.num_layers)[:, None, None]
    return series.pairs[None, :, :] + series.num_nodes * t


def edge_level(node_rows, index):
    """Mean of the endpoint rows: (N*T, k) tensor and (T, E, 2) index -> (T, E, k)."""
    T, E, _ = index.shape
    a = take(node_rows, index[..., 0].ravel())
    b = take(node_rows, index[..., 1].ravel())
    return ((a + b) * 0.5).reshape(T, E, -1)


# --------------------------------------------------------------------------
# estimator


class EdgeImputer(BaseEstimator):
    """Estimate withheld edge-stream values of a :class:`MaskedSeries`.

    Training is denoising: every epoch a random fraction ``hide_rate`` of
    the observed cells is hidden from the network (and from the TMP-GNN
    node features), and the loss is the mean squared error on those
    hidden, observed cells. The parameters with the lowest RMSE on the
    validation half of the removed cells are kept.

    Parameters
    ----------
    arch : {"mrnn", "etmpgnn1", "etmpgnn2"}
    hidden_dim : int
        Width of each GRU direction.
    embed_dim : int or None
        Edge-embedding width d for ``etmpgnn1``, reached through a bias-free
        projection of the anchor-set coordinates; ``None`` uses the anchor
        coordinates directly. ``0`` reduces the model to M-RNN.
    tmp_hidden, tmp_layers : int
        TMP-GNN hidden width and depth.
    anchor_copies, q, mode :
        TMP-GNN anchor sampling and message settings.
    mix : {"scalar", "unit"}
        Mixing weights of ``etmpgnn2``.
    freeze_embeddings : bool
        Keep the TMP-GNN weights at their initialization instead of
        training them jointly with the recurrent network.
    hide_rate : float
        Fraction of observed cells hidden per training epoch.
    epochs, lr : training schedule (Adam).
    seed : int
    """

    def __init__(self, arch=ARCH_ETMPGNN1, hidden_dim=16, embed_dim=4, tmp_hidden=8, tmp_layers=1,
                 anchor_copies=1, q=2, mode=FAST, mix="scalar", freeze_embeddings=False,
                 hide_rate=0.2, epochs=200, lr=0.05, seed=0):
        self.arch = arch
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.tmp_hidden = tmp_hidden
        self.tmp_layers = tmp_layers
        self.anchor_copies = anchor_copies
        self.q = q
        self.mode = mode
        self.mix = mix
        self.freeze_embeddings = freeze_embeddings
        self.hide_rate = hide_rate
        self.epochs = epochs
        self.lr = lr
        self.seed = seed

    # model construction --------------------------------------------------

    def _uses_tmpgnn(self):
        if self.arch == ARCH_MRNN:
            return False
        if self.arch == ARCH_ETMPGNN1:
            return self.embed_dim != 0
        return True

    def _build(self, series, g):
        D = series.num_streams
        init = substream(self.seed, "imputer-init")
        self.tmp_inputs_ = None
        self.tmpgnn_ = None
        if self._uses_tmpgnn():
            if g is None:
                raise ValueError(f"{self.arch} needs the graph to build TMP-GNN inputs")
            # centrality and anchors see only which edges exist, never stream values,
            # so withheld cells cannot leak into the model through edge weights
            self.tmp_inputs_ = prepare_inputs(
                structure_only(g), SINGLE, q=self.q, radius=2, mode=self.mode,
                copies=self.anchor_copies, n_layers=self.tmp_layers,
                rng=substream(self.seed, "anchors"), use_features=False)
            in_dim = D + 1
            self.tmpgnn_ = TMPGNN(in_dim, self.tmp_hidden, self.tmp_layers,
                                  self.tmp_inputs_.num_sets, self.embed_dim or None,
                                  rng=substream(self.seed, "tmpgnn-init"))
        if self.arch == ARCH_MRNN:
            self.model_ = MRNN(D, self.hidden_dim, rng=init)
            self.embedding_dim_ = 0
        elif self.arch == ARCH_ETMPGNN1:
            d = 0 if self.embed_dim == 0 else (self.embed_dim or self.tmp_inputs_.num_sets)
            self.model_ = ETMPGNN1(D, d, self.hidden_dim, rng=init)
            self.embedding_dim_ = d
        elif self.arch == ARCH_ETMPGNN2:
            self.model_ = ETMPGNN2(D, self.tmp_hidden, self.hidden_dim, self.mix, rng=init)
            self.embedding_dim_ = self.tmp_hidden
        else:
            raise ValueError(f"unknown architecture {self.arch!r}")

    def _named_parameters(self):
        params = dict(self.model_.named_parameters())
        if self.tmpgnn_ is not None and not self.freeze_embeddings:
            params.update({f"tmpgnn.{k}": v for k, v in self.tmpgnn_.named_parameters().items()})
        return params

    # forward ---------------------------------------------------------------

    def _forward(self, series, index):
        values = Tensor(_time_major(series.values))
        mask = Tensor(_time_major(series.mask))
        delta = Tensor(_time_major(series.delta) / series.num_layers)
        if self.tmpgnn_ is None:
            return self.model_(values, mask, delta)
        inp = self.tmp_inputs_
        layer, src, dst, vals, obs = series.layer_entries()
        feats = standardize_columns(node_features(series.num_nodes, series.num_layers, layer,
                                                  src, dst, vals, obs, cc=inp.cc))
        z, h = self.tmpgnn_(feats, inp.structures)
        if self.arch == ARCH_ETMPGNN1:
            return self.model_(values, mask, delta, edge_level(z, index))
        return self.model_(values, mask, delta, edge_level(h, index))

    # public API ------------------------------------------------------------

    def fit(self, series, g=None):
        """Train on ``series``; ``g`` is the graph it was built from (needed by the
        TMP-GNN architectures)."""
        check_probability(self.hide_rate, "hide_rate", open_interval=True)
        val, test = split_removed(series, substream(self.seed, "eval-split"))
        self._build(series, g)
        index = edge_node_index(series)
        params = self._named_parameters()
        opt = Adam(params, lr=self.lr)
        rng = substream(self.seed, "hide")
        target = _time_major(series.values)
        truth = _time_major(series.truth)
        val_tm = _time_major(val)
        best = (np.inf, None, -1)
        history = []
        for epoch in range(int(self.epochs)):
            hidden = (series.mask > 0) & (rng.random(series.mask.shape) < self.hide_rate)
            if not hidden.any():
                continue
            hidden_tm = _time_major(hidden)
            opt.zero_grad()
            est = self._forward(series.hide(hidden), index)
            diff = (est - target) * hidden_tm
            loss = (diff * diff).sum() * (1.0 / hidden_tm.sum())
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite imputation loss at epoch {epoch} "
                                         f"({self.arch}, hidden cells {int(hidden.sum())})")
            loss.backward()
            opt.step()
            with no_grad():
                full = self._forward(series, index).data
            val_rmse = float(np.sqrt(np.mean((full[val_tm] - truth[val_tm]) ** 2)))
            history.append((float(loss.data), val_rmse))
            if val_rmse < best[0]:
                best = (val_rmse, {k: p.data.copy() for k, p in params.items()}, epoch)
        if best[1] is not None:
            for k, p in params.items():
                p.data = best[1][k]
        self.val_cells_, self.test_cells_ = val, test
        self.history_ = history
        self.best_epoch_ = best[2]
        self.series_ = series
        return self

    def predict(self, series=None):
        """Estimates for every cell, shape (E, D, T)."""
        check_is_fitted(self, "model_")
        series = self.series_ if series is None else series
        with no_grad():
            est = self._forward(series, edge_node_index(series)).data
        return np.ascontiguousarray(np.transpose(est, (1, 2, 0)))

    def evaluate(self, series=None, cells=None):
        """MAE and RMSE over withheld cells (the test half by default)."""
        check_is_fitted(self, "model_")
        series = self.series_ if series is None else series
        if cells is None:
            cells = self.test_cells_ if series is self.series_ else series.removed
        cells = np.asarray(cells, dtype=bool) & series.removed
        if not cells.any():
            raise ValueError("no removed cells to evaluate on")
        est = self.predict(series)
        err = est[cells] - series.truth[cells]
        return {"mae": float(np.mean(np.abs(err))), "rmse": float(np.sqrt(np.mean(err ** 2)))}

    def score(self, series=None, y=None):
        return -self.evaluate(series)["mae"]


def evaluate_mae(g, taus, archs=ARCHITECTURES, seeds=(0,), **params):
    """Fit every architecture at every missing threshold and seed.

    Returns a report with the per-run metrics, the per-tau mean MAE of each
    architecture and the relative improvement of each architecture's mean
    MAE over M-RNN in percent (when M-RNN is among ``archs``).
    """
    runs = []
    for tau in taus:
        for seed in seeds:
            series = mask_remove(g, tau, substream(seed, "mask"))
            for arch in archs:
                est = EdgeImputer(arch=arch, seed=seed, **params).fit(series, g)
                runs.append({"arch": arch, "tau": float(tau), "seed": int(seed),
                             **est.evaluate(), "best_epoch": est.best_epoch_})
    curves = {arch: [float(np.mean([r["mae"] for r in runs
                                    if r["arch"] == arch and r["tau"] == float(tau)]))
                     for tau in taus] for arch in archs}
    improvement = {}
    if ARCH_MRNN in curves:
        for arch in archs:
            improvement[arch] = [relative_improvement(m, b) if b > 0 else None
                                 for m, b in zip(curves[arch], curves[ARCH_MRNN])]
    return {"taus": [float(t) for t in taus], "runs": runs, "mae": curves,
            "improvement_vs_mrnn_pct": improvement}
