"""Supracentrality matrices and eigenvector-based node-layer centralities.

A temporal multilayer graph with N nodes and T layers is encoded as one
(N*T) x (N*T) matrix ``C(omega) = blockdiag(A^(1), ..., A^(T)) + omega * kron(A_inter, I_N)``.
Node ``n`` at layer ``t`` sits at row ``n + N * t``. The dominant eigenvector
of that matrix scores every node-layer pair.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .graph import layer_adjacency
from .validation import ConvergenceError, GraphValidationError, check_graph, check_square

CHAIN = "chain"
TELEPORT = "teleport"


@dataclass(frozen=True)
class InterLayerCoupling:
    mode: str
    delta: int
    gamma: Optional[float]
    matrix: np.ndarray

    @property
    def num_layers(self):
        return self.matrix.shape[0]


def interlayer_matrix(num_layers, delta=1, mode=CHAIN, gamma=None):
    """T x T inter-layer coupling matrix.

    ``chain`` puts ones where ``|t' - t| == delta``. ``teleport`` adds the
    teleportation probability ``gamma`` to every entry of the chain matrix,
    diagonal included.
    """
    T = int(num_layers)
    if T < 1:
        raise GraphValidationError("need at least one layer")
    if delta < 1:
        raise GraphValidationError("layer spacing delta must be >= 1")
    idx = np.arange(T)
    chain = (np.abs(idx[:, None] - idx[None, :]) == delta).astype(np.float64)
    mode = mode.lower()
    if mode == CHAIN:
        return InterLayerCoupling(CHAIN, int(delta), None, chain)
    if mode == TELEPORT:
        if gamma is None:
            raise GraphValidationError("teleport coupling requires gamma")
        if gamma < 0:
            raise GraphValidationError("gamma must be nonnegative")
        return InterLayerCoupling(TELEPORT, int(delta), float(gamma), chain + float(gamma))
    raise GraphValidationError(f"unknown coupling mode {mode!r}")


@dataclass(frozen=True)
class SupraMatrix:
    num_nodes: int
    num_layers: int
    omega: float
    coupling: InterLayerCoupling
    intra: sparse.csr_matrix
    inter: sparse.csr_matrix
    matrix: sparse.csr_matrix = field(repr=False)

    @property
    def size(self):
        return self.num_nodes * self.num_layers


def build_supracentrality(g, omega, coupling=None, stream=0):
    """Assemble ``C(omega)`` with per-layer centrality matrices equal to ``A^(t)``."""
    check_graph(g)
    if omega < 0:
        raise GraphValidationError("omega must be nonnegative")
    if coupling is None:
        coupling = interlayer_matrix(g.num_layers)
    if coupling.num_layers != g.num_layers:
        raise GraphValidationError("coupling matrix does not match the layer count")
    blocks = [layer_adjacency(g, t, stream) for t in range(g.num_layers)]
    intra = sparse.block_diag(blocks, format="csr")
    inter = sparse.kron(sparse.csr_matrix(coupling.matrix),
                        sparse.identity(g.num_nodes, format="csr"), format="csr")
    mat = (intra + float(omega) * inter).tocsr()
    mat.sum_duplicates()
    return SupraMatrix(g.num_nodes, g.num_layers, float(omega), coupling, intra, inter, mat)


def power_iteration(M, tol=1e-8, max_iter=200_000, eps=1e-12, v0=None):
    """Dominant eigenpair of a nonnegative square matrix.

    Starts from the all-ones vector and iterates on the shifted matrix
    ``M + s*I + eps*J/n`` with ``s`` a quarter of the largest row sum, so that
    periodic (bipartite) matrices converge too; the shift does not move
    eigenvectors. The eigenvalue is the Rayleigh quotient on ``M`` itself.
    Iteration stops once both the eigenvalue change and the residual
    ``||Mv - lam v||`` are below ``tol * max(1, |lam|)``.

    Returns
    -------
    lam : float
    v : ndarray
        Unit-norm eigenvector with nonnegative sum.
    """
    if sparse.issparse(M):
        M = M.tocsr()
    else:
        M = np.asarray(M, dtype=np.float64)
    check_square(M)
    n = M.shape[0]
    absM = abs(M)
    row_sums = np.asarray(absM.sum(axis=1)).ravel()
    if n == 0 or not np.any(row_sums > 0):
        raise ValueError("zero matrix has no dominant eigendirection")
    shift = 0.25 * row_sums.max()

    v = np.ones(n) if v0 is None else np.asarray(v0, dtype=np.float64).copy()
    v /= np.linalg.norm(v)
    Mv = M @ v
    lam = float(v @ Mv)
    for _ in range(int(max_iter)):
        w = Mv + shift * v + (eps / n) * v.sum()
        norm = np.linalg.norm(w)
        if norm == 0 or not np.isfinite(norm):
            raise ConvergenceError("power iteration collapsed to zero", (lam, v))
        v = w / norm
        Mv = M @ v
        lam_new = float(v @ Mv)
        scale = max(1.0, abs(lam_new))
        if (abs(lam_new - lam) < tol * scale
                and np.linalg.norm(Mv - lam_new * v) < tol * scale):
            lam = lam_new
            break
        lam = lam_new
    else:
        raise ConvergenceError(
            f"power iteration did not converge in {max_iter} iterations", (lam, v))
    if v.sum() < 0:
        v = -v
    return lam, v


@dataclass(frozen=True)
class CentralitySummary:
    """Joint, marginal-layer and conditional centralities.

    ``joint`` and ``cc`` have shape (N, T); ``mlc`` has shape (T,).
    """

    joint: np.ndarray
    mlc: np.ndarray
    cc: np.ndarray
    lambda_max: float
    omega: float
    eigenvector: np.ndarray = field(repr=False)


def unflatten_node_layers(vec, num_nodes, num_layers):
    """Map a length-NT vector indexed ``n + N*t`` onto an (N, T) grid."""
    return np.asarray(vec).reshape(num_layers, num_nodes).T.copy()


def flatten_node_layers(grid):
    return np.asarray(grid).T.reshape(-1).copy()


def centralities(supra, tol=1e-8, max_iter=200_000, eps=1e-12):
    """Eigenvector centralities of a supracentrality matrix.

    Layers whose joint centrality mass is zero get a uniform conditional
    centrality ``1/N`` and a warning.
    """
    lam, v = power_iteration(supra.matrix, tol=tol, max_iter=max_iter, eps=eps)
    v = np.clip(v, 0.0, None)
    joint = unflatten_node_layers(v, supra.num_nodes, supra.num_layers)
    mlc = joint.sum(axis=0)
    cc = np.empty_like(joint)
    empty = mlc <= 0
    if empty.any():
        warnings.warn(f"layers {np.flatnonzero(empty).tolist()} have zero centrality mass; "
                      "using uniform conditional centrality there", RuntimeWarning)
    cc[:, ~empty] = joint[:, ~empty] / mlc[~empty]
    cc[:, empty] = 1.0 / supra.num_nodes
    return CentralitySummary(joint, mlc, cc, lam, supra.omega, v)


def relative_gap(g, omega, coupling=None, stream=0, tol=1e-8, max_iter=200_000, eps=1e-12,
                 mu_inter=None):
    """``|lambda_max(C(omega)) - omega * mu| / (omega * mu)`` with mu the inter-layer Perron root."""
    if coupling is None:
        coupling = interlayer_matrix(g.num_layers)
    if mu_inter is None:
        mu_inter, _ = power_iteration(coupling.matrix, tol=1e-12)
    supra = build_supracentrality(g, omega, coupling, stream)
    lam, _ = power_iteration(supra.matrix, tol=tol, max_iter=max_iter, eps=eps)
    ref = omega * mu_inter
    return abs(lam - ref) / ref, lam


def select_omega(g, tol=0.01, omega_start=10.0, growth=2.0, omega_cap=1e6, coupling=None,
                 stream=0, power_tol=1e-8, max_iter=200_000, eps=1e-12, history=None):
    """Smallest coupling strength on a geometric ladder reaching the strong-coupling regime.

    Tests ``omega_start, omega_start*growth, ...`` and returns the first
    value whose dominant eigenvalue lies within relative distance ``tol`` of
    ``omega * mu``, where ``mu`` is the dominant eigenvalue of the
    inter-layer coupling matrix. Pass a list as ``history`` to collect
    ``(omega, lambda_max, gap)`` for every tested value.
    """
    check_graph(g)
    if omega_start <= 0 or growth <= 1:
        raise GraphValidationError("need omega_start > 0 and growth > 1")
    if coupling is None:
        coupling = interlayer_matrix(g.num_layers)
    if not np.any(coupling.matrix):
        raise GraphValidationError("inter-layer coupling is empty; no strong-coupling regime")
    mu, _ = power_iteration(coupling.matrix, tol=1e-12)
    omega = float(omega_start)
    gap = np.inf
    while omega <= omega_cap:
        gap, lam = relative_gap(g, omega, coupling, stream, power_tol, max_iter, eps, mu)
        if history is not None:
            history.append((omega, lam, gap))
        if gap < tol:
            return omega
        omega *= growth
    raise ConvergenceError(
        f"no omega <= {omega_cap:g} reaches relative gap {tol}; last gap {gap:.3g}", gap=gap)


def stationary_cc(g, omega="auto", coupling=None, stream=0, **kwargs):
    """Layer-averaged conditional centrality at strong coupling, shape (N,)."""
    if omega == "auto":
        omega = select_omega(g, coupling=coupling, stream=stream, **kwargs)
    supra = build_supracentrality(g, omega, coupling, stream)
    summ = centralities(supra, tol=kwargs.get("power_tol", 1e-8))
    return summ.cc.mean(axis=1)


def layerwise_cc(g, stream=0, tol=1e-8, eps=1e-12):
    """Conditional eigenvector centrality of each layer on its own, shape (N, T)."""
    out = np.full((g.num_nodes, g.num_layers), 1.0 / g.num_nodes)
    for t in range(g.num_layers):
        A = layer_adjacency(g, t, stream)
        if A.nnz == 0 or not np.any(A.data):
            continue
        _, v = power_iteration(A, tol=tol, eps=eps)
        v = np.clip(v, 0.0, None)
        if v.sum() > 0:
            out[:, t] = v / v.sum()
    return out


class SupraCentrality(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Estimator wrapper: ``fit`` picks omega, ``transform`` returns CC(v, t).

    Parameters
    ----------
    omega : "auto" or float
    coupling : {"chain", "teleport"}
    gamma : float, optional
        Teleportation probability, required for ``coupling="teleport"``.
    delta : int
        Layer spacing of the chain coupling.
    stream : int or "mean"
        Edge stream used as adjacency weight.
    omega_tol : float
        Relative eigenvalue gap accepted by the omega search.
    tol : float
        Power-iteration tolerance.

    Attributes
    ----------
    omega_ : float
    lambda_max_ : float
    joint_, cc_ : ndarray of shape (N, T)
    mlc_ : ndarray of shape (T,)
    stationary_cc_ : ndarray of shape (N,)
    """

    def __init__(self, omega="auto", coupling=CHAIN, gamma=None, delta=1, stream=0,
                 omega_tol=0.01, omega_start=10.0, growth=2.0, omega_cap=1e6,
                 tol=1e-8, eps=1e-12, max_iter=200_000):
        self.omega = omega
        self.coupling = coupling
        self.gamma = gamma
        self.delta = delta
        self.stream = stream
        self.omega_tol = omega_tol
        self.omega_start = omega_start
        self.growth = growth
        self.omega_cap = omega_cap
        self.tol = tol
        self.eps = eps
        self.max_iter = max_iter

    def _coupling(self, g):
        return interlayer_matrix(g.num_layers, self.delta, self.coupling, self.gamma)

    def fit(self, g, y=None):
        check_graph(g)
        coupling = self._coupling(g)
        if self.omega == "auto":
            history = []
            self.omega_ = select_omega(
                g, tol=self.omega_tol, omega_start=self.omega_start, growth=self.growth,
                omega_cap=self.omega_cap, coupling=coupling, stream=self.stream,
                power_tol=self.tol, max_iter=self.max_iter, eps=self.eps, history=history)
            self.omega_history_ = history
        else:
            self.omega_ = float(self.omega)
            self.omega_history_ = []
        summ = self._summary(g, coupling)
        self.lambda_max_ = summ.lambda_max
        self.joint_ = summ.joint
        self.mlc_ = summ.mlc
        self.cc_ = summ.cc
        self.stationary_cc_ = summ.cc.mean(axis=1)
        self.n_nodes_, self.n_layers_ = g.num_nodes, g.num_layers
        return self

    def _summary(self, g, coupling):
        supra = build_supracentrality(g, self.omega_, coupling, self.stream)
        return centralities(supra, tol=self.tol, max_iter=self.max_iter, eps=self.eps)

    def transform(self, g):
        check_is_fitted(self, "omega_")
        check_graph(g)
        return self._summary(g, self._coupling(g)).cc
