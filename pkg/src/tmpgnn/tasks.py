"""Pairwise node classification over node-layer embeddings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .autograd import no_grad, parameter, softplus, take
from .nn import Adam
from .validation import check_random_state

SINGLE_SUPRAGRAPH = "supra"
MULTIGRAPH_NODE_SPLIT = "multigraph"


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint train/val/test node-layer index sets (indices ``n + N*t``)."""

    scheme: str
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: object = None


def _split_sizes(n):
    n_hold = max(1, int(round(0.1 * n)))
    n_train = n - 2 * n_hold
    if n_train < 1:
        raise ValueError(f"{n} items are too few for a train/val/test split")
    return n_train, n_hold


def make_split(num_nodes, num_layers, scheme=SINGLE_SUPRAGRAPH, seed=None):
    """80/10/10 split of node-layers.

    ``supra`` splits the N*T node-layers directly. ``multigraph`` splits the
    N nodes and gives every layer copy of a node to the same part.
    """
    rng = check_random_state(seed)
    N, T = int(num_nodes), int(num_layers)
    if scheme == SINGLE_SUPRAGRAPH:
        perm = rng.permutation(N * T)
        n_train, n_hold = _split_sizes(N * T)
        parts = perm[:n_train], perm[n_train:n_train + n_hold], perm[n_train + n_hold:]
    elif scheme == MULTIGRAPH_NODE_SPLIT:
        perm = rng.permutation(N)
        n_train, n_hold = _split_sizes(N)
        layers = np.arange(T) * N
        parts = tuple((p[:, None] + layers[None, :]).ravel()
                      for p in (perm[:n_train], perm[n_train:n_train + n_hold],
                                perm[n_train + n_hold:]))
    else:
        raise ValueError(f"unknown split scheme {scheme!r}")
    return SplitPlan(scheme, *(np.sort(p).astype(np.int64) for p in parts),
                     seed=seed if isinstance(seed, (int, np.integer)) else None)


def sample_pairs(part, labels, count, seed=None):
    """Balanced pairs from ``part``: ``count//2`` same-label, ``count//2`` different.

    Pairs are unordered, never self-pairs, and uniform within each class.
    ``labels`` is indexed by the ids in ``part``. Returns an int array of
    shape (2 * (count//2), 3) with columns ``a, b, label``.
    """
    rng = check_random_state(seed)
    part = np.asarray(part, dtype=np.int64)
    lab = np.asarray(labels)[part]
    keep = lab >= 0
    part, lab = part[keep], lab[keep]
    if len(part) < 2:
        raise ValueError("need at least two labeled nodes to form pairs")
    _, counts = np.unique(lab, return_counts=True)
    n_pos_pairs = int((counts * (counts - 1) // 2).sum())
    n_all = len(part) * (len(part) - 1) // 2
    if n_pos_pairs == 0:
        raise ValueError("no same-community pair exists in this part")
    if n_pos_pairs == n_all:
        raise ValueError("no cross-community pair exists in this part")
    half = int(count) // 2
    out = {1: [], 0: []}
    while len(out[1]) < half or len(out[0]) < half:
        m = max(4 * half, 64)
        i = rng.integers(0, len(part), size=m)
        j = rng.integers(0, len(part), size=m)
        ok = i != j
        for a, b in zip(i[ok], j[ok]):
            y = int(lab[a] == lab[b])
            if len(out[y]) < half:
                lo, hi = (a, b) if a < b else (b, a)
                out[y].append((part[lo], part[hi], y))
    rows = out[1] + out[0]
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def roc_auc(scores, labels):
    """Area under the ROC curve via the Mann-Whitney rank statistic (midranks for ties)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC AUC needs both classes")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def relative_improvement(metric_new, metric_base):
    """``|new - base| / base * 100``."""
    if metric_base == 0:
        raise ZeroDivisionError("baseline metric is zero")
    return abs(metric_new - metric_base) / metric_base * 100.0


CENTERED = "centered"
DOT = "dot"


def center_embeddings(z, readout=CENTERED):
    """Subtract the mean embedding over all rows (``centered``) or pass through (``dot``)."""
    if readout == CENTERED:
        return z - z.mean(axis=0, keepdims=True)
    if readout == DOT:
        return z
    raise ValueError(f"unknown readout {readout!r}")


def pair_logits(z, pairs):
    return (take(z, pairs[:, 0]) * take(z, pairs[:, 1])).sum(axis=1)


def pair_scores(z, pairs, readout=CENTERED):
    """Dot-product scores of row pairs of an embedding array under a readout."""
    z = np.asarray(z, dtype=np.float64)
    if readout == CENTERED:
        z = z - z.mean(axis=0)
    elif readout != DOT:
        raise ValueError(f"unknown readout {readout!r}")
    return (z[pairs[:, 0]] * z[pairs[:, 1]]).sum(axis=1)


def train_pairwise(embed_fn, params, labels, split, epochs=100, lr=1e-2, n_train_pairs=1000,
                   n_val_pairs=200, n_test_pairs=200, seed=None, on_epoch=None,
                   readout=CENTERED):
    """Fit embeddings so that ``sigmoid(z_a . z_b)`` predicts same-community pairs.

    With ``readout="centered"`` the embeddings are first centered on their
    mean over all rows; sigmoid outputs are all positive, and an uncentered
    dot product mostly measures how many anchor sets two nodes are near
    rather than which ones. The training logit is calibrated as
    ``scale * (z_a . z_b) + offset`` with two learned scalars. Scores used
    for AUC are the plain (centered) dot products; the calibration is
    monotone and does not change them.

    ``embed_fn()`` must return the (n, d) embedding tensor built from the
    tensors in ``params``. Training pairs are redrawn every epoch; the
    parameters from the epoch with the best validation AUC are restored
    and its test AUC reported.

    Returns
    -------
    dict with ``auc_val``, ``auc_test``, ``best_epoch``, ``epochs`` and
    ``history`` (per-epoch loss and validation AUC).
    """
    rng = check_random_state(seed)
    val_pairs = sample_pairs(split.val, labels, n_val_pairs, rng)
    test_pairs = sample_pairs(split.test, labels, n_test_pairs, rng)
    scale, offset = parameter(np.ones(())), parameter(np.zeros(()))
    all_params = dict(params)
    all_params.update({"readout.scale": scale, "readout.offset": offset})
    opt = Adam(all_params, lr=lr)
    best = (-np.inf, None, None, -1)
    history = []
    for epoch in range(int(epochs)):
        pairs = sample_pairs(split.train, labels, n_train_pairs, rng)
        opt.zero_grad()
        z = embed_fn()
        logits = pair_logits(center_embeddings(z, readout), pairs) * scale + offset
        y = pairs[:, 2].astype(np.float64)
        loss = (softplus(logits) - logits * y).mean()
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"non-finite pairwise loss at epoch {epoch}")
        zd = z.data
        auc_val = roc_auc(pair_scores(zd, val_pairs, readout), val_pairs[:, 2])
        history.append((float(loss.data), auc_val))
        if auc_val > best[0]:
            best = (auc_val, roc_auc(pair_scores(zd, test_pairs, readout), test_pairs[:, 2]),
                    {k: p.data.copy() for k, p in params.items()}, epoch)
        if on_epoch is not None:
            on_epoch(epoch, float(loss.data), auc_val)
        loss.backward()
        opt.step()
    if epochs > 0:
        for k, p in params.items():
            p.data = best[2][k]
    else:
        with no_grad():
            zd = embed_fn().data
        for pr, slot in ((val_pairs, 0), (test_pairs, 1)):
            auc = roc_auc(pair_scores(zd, pr, readout), pr[:, 2])
            best = best[:slot] + (auc,) + best[slot + 1:]
    return {"auc_val": float(best[0]), "auc_test": float(best[1]), "best_epoch": int(best[3]),
            "epochs": int(epochs), "history": history,
            "readout": (float(scale.data), float(offset.data))}
