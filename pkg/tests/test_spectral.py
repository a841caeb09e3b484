import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg, sparse
from sklearn.base import clone

from tmpgnn.graph import SynthConfig, TemporalMultilayerGraph, synth_graph
from tmpgnn.spectral import (TELEPORT, SupraCentrality, build_supracentrality,
                             centralities, flatten_node_layers, interlayer_matrix, layerwise_cc,
                             power_iteration, select_omega, unflatten_node_layers)
from tmpgnn.validation import ConvergenceError, GraphValidationError

from .conftest import dense_supra, random_graph


def dense_perron(M):
    """Dense eigensolver oracle: dominant eigenvalue and unit nonnegative eigenvector."""
    vals, vecs = linalg.eig(M)
    k = int(np.argmax(vals.real))
    v = np.abs(vecs[:, k].real)
    return float(vals[k].real), v / np.linalg.norm(v)


def random_irreducible(rng, n):
    M = rng.random((n, n)) * (rng.random((n, n)) < 0.4)
    ring = np.roll(np.eye(n), 1, axis=1) * rng.uniform(0.1, 1.0, size=n)[:, None]
    return M + ring


def test_interlayer_chain_and_teleport():
    chain = interlayer_matrix(4).matrix
    np.testing.assert_array_equal(chain, np.diag(np.ones(3), 1) + np.diag(np.ones(3), -1))
    tele = interlayer_matrix(4, mode=TELEPORT, gamma=0.2).matrix
    np.testing.assert_allclose(tele, chain + 0.2)
    skip = interlayer_matrix(5, delta=2).matrix
    assert skip[0, 2] == 1 and skip[0, 1] == 0
    with pytest.raises(GraphValidationError):
        interlayer_matrix(3, mode=TELEPORT)
    with pytest.raises(GraphValidationError):
        interlayer_matrix(3, mode="ring")


@pytest.mark.parametrize("n", [1, 2, 5, 17, 32])
def test_power_iteration_matches_dense_oracle(n):
    rng = np.random.default_rng(n)
    M = random_irreducible(rng, n) if n > 1 else np.array([[0.7]])
    lam, v = power_iteration(M, tol=1e-12)
    lam_ref, v_ref = dense_perron(M)
    assert abs(lam - lam_ref) < 1e-6
    assert v @ v_ref >= 1 - 1e-9


def test_power_iteration_handles_bipartite_and_sparse():
    P = np.array([[0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0]], float)
    lam, v = power_iteration(sparse.csr_matrix(P), tol=1e-12)
    assert abs(lam - 2 * np.cos(np.pi / 5)) < 1e-9
    assert np.linalg.norm(P @ v - lam * v) < 1e-8


def test_power_iteration_rejects_non_square():
    with pytest.raises(ValueError):
        power_iteration(np.ones((2, 3)))


def test_supra_assembly_exact_chain_and_teleport(fixtures_nt64):
    for g in fixtures_nt64:
        for coupling in (interlayer_matrix(g.num_layers),
                         interlayer_matrix(g.num_layers, mode=TELEPORT, gamma=0.15)):
            supra = build_supracentrality(g, 3.5, coupling)
            np.testing.assert_array_equal(supra.matrix.toarray(),
                                          dense_supra(g, 3.5, coupling.matrix))


def test_node_layer_index_convention():
    g = random_graph(3, 2, seed=0)
    grid = np.arange(6).reshape(3, 2)
    flat = flatten_node_layers(grid)
    assert flat[g.node_layer_index(2, 1)] == grid[2, 1]
    np.testing.assert_array_equal(unflatten_node_layers(flat, 3, 2), grid)


@pytest.mark.parametrize("T", range(3, 11))
def test_path_eigenvalue_closed_form(T):
    empty = TemporalMultilayerGraph(3, T, 1, [], [], [], np.zeros((0, 1)))
    omega = 5.0
    lam, _ = power_iteration(build_supracentrality(empty, omega).matrix, tol=1e-13)
    assert abs(lam / omega - 2 * np.cos(np.pi / (T + 1))) < 1e-6


def test_centrality_conservation(fixtures_nt64):
    for g in fixtures_nt64:
        summ = centralities(build_supracentrality(g, 10.0))
        np.testing.assert_allclose(summ.cc.sum(axis=0), 1.0, atol=1e-9)
        np.testing.assert_allclose(summ.mlc, summ.joint.sum(axis=0))


def test_uncoupled_empty_layer_still_conserves_cc():
    g = TemporalMultilayerGraph(3, 2, 1, [0], [0], [1], [[1.0]], directed=False)
    summ = centralities(build_supracentrality(g, 0.0))
    np.testing.assert_allclose(summ.cc.sum(axis=0), 1.0, atol=1e-9)
    assert summ.mlc[1] < 1e-3 * summ.mlc[0]


def test_select_omega_ladder_and_gap():
    g = synth_graph(SynthConfig(num_nodes=3, num_layers=4, communities=1, p_in=1.0, p_out=0.0,
                                seed=0))
    hist = []
    omega = select_omega(g, history=hist)
    assert omega >= 10
    assert [h[0] for h in hist] == [10.0 * 2 ** k for k in range(len(hist))]
    assert hist[-1][2] < 0.01 and all(h[2] >= 0.01 for h in hist[:-1])


def test_select_omega_raises_when_capped():
    g = random_graph(6, 3, p=0.9, seed=0)
    with pytest.raises(ConvergenceError) as info:
        select_omega(g, tol=1e-9, omega_cap=20)
    assert info.value.gap is not None


def test_select_omega_needs_coupling():
    g = random_graph(4, 1, seed=0)
    with pytest.raises(GraphValidationError):
        select_omega(g)


def test_layerwise_cc_sums_to_one(small_graph):
    cc = layerwise_cc(small_graph)
    np.testing.assert_allclose(cc.sum(axis=0), 1.0, atol=1e-9)


def test_estimator_api(small_graph):
    est = SupraCentrality(omega=25.0)
    assert clone(est).get_params() == est.get_params()
    cc = est.fit(small_graph).transform(small_graph)
    assert cc.shape == (6, 4)
    np.testing.assert_array_equal(cc, est.cc_)
    assert est.omega_ == 25.0 and est.omega_history_ == []
    auto = SupraCentrality().fit(small_graph)
    assert auto.omega_ >= 10 and auto.omega_history_
    np.testing.assert_allclose(auto.stationary_cc_, auto.cc_.mean(axis=1))


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 6), st.integers(2, 5), st.floats(0.5, 50), st.integers(0, 1000))
def test_supra_is_symmetric_for_undirected_graphs(n, t, omega, seed):
    g = random_graph(n, t, p=0.5, seed=seed)
    M = build_supracentrality(g, omega).matrix
    assert abs(M - M.T).max() == 0
    assert M.min() >= 0
