import dataclasses
import itertools

import numpy as np
import pytest
from sklearn.base import clone

from tmpgnn.autograd import Tensor, parameter
from tmpgnn.graph import SynthConfig, TemporalMultilayerGraph, synth_graph
from tmpgnn.imputation import (ARCH_ETMPGNN1, ARCH_ETMPGNN2, ARCH_MRNN, ETMPGNN1, ETMPGNN2, MRNN,
                               EdgeImputer, delta_array, edge_level, edge_node_index, edge_series,
                               evaluate_mae, mask_remove, split_removed, structure_only)

from .gradcheck import check_module_gradients


def delta_reference(mask):
    """Gap recurrence written out for one series."""
    out = [0.0]
    for t in range(1, len(mask)):
        out.append(1.0 if mask[t - 1] else out[-1] + 1.0)
    return out


@pytest.mark.parametrize("T", range(1, 13))
def test_delta_array_exhaustive(T):
    masks = np.array(list(itertools.product([0, 1], repeat=T)), dtype=float)
    got = delta_array(masks)
    expected = np.array([delta_reference(m) for m in masks])
    np.testing.assert_array_equal(got, expected)


@pytest.fixture(scope="module")
def graph():
    return synth_graph(SynthConfig(num_nodes=10, num_layers=6, num_streams=2, seed=0))


def test_edge_series_matches_edges(graph):
    pairs, X, present = edge_series(graph)
    assert X.shape == (len(pairs), 2, 6)
    for t, u, v, x in zip(graph.layer, graph.src, graph.dst, graph.features):
        e = np.flatnonzero((pairs[:, 0] == u) & (pairs[:, 1] == v))[0]
        assert present[e, t]
        np.testing.assert_array_equal(X[e, :, t], x)
    assert present.sum() == graph.num_edges


def test_mask_remove_discipline(graph):
    s = mask_remove(graph, 0.3, seed=1)
    observed = np.broadcast_to(s.present[:, None, :], s.mask.shape)
    assert not (s.removed & ~observed).any()
    assert not (s.removed & (s.mask > 0)).any()
    np.testing.assert_array_equal(s.mask > 0, observed & ~s.removed)
    assert not s.values[s.mask == 0].any()
    _, X, _ = edge_series(graph)
    np.testing.assert_array_equal(s.truth[s.removed], X[s.removed])
    np.testing.assert_array_equal(s.delta, delta_array(s.mask))
    assert 0.2 < s.removed.sum() / observed.sum() < 0.4


def test_masks_are_nested_across_tau_for_a_shared_seed(graph):
    small, large = mask_remove(graph, 0.1, seed=3), mask_remove(graph, 0.4, seed=3)
    assert not (small.removed & ~large.removed).any()


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5])
def test_mask_remove_rejects_bad_tau(graph, tau):
    with pytest.raises(ValueError):
        mask_remove(graph, tau)


def test_hide_and_layer_entries(graph):
    s = mask_remove(graph, 0.2, seed=0)
    extra = np.zeros_like(s.removed)
    extra[0, 0, :] = True
    h = s.hide(extra)
    assert not h.mask[0, 0].any() and not h.values[0, 0].any()
    np.testing.assert_array_equal(h.removed, s.removed)
    t, src, dst, vals, obs = s.layer_entries()
    assert len(t) == s.present.sum()
    assert not vals[obs == 0].any()


def test_split_removed_halves_are_disjoint(graph):
    s = mask_remove(graph, 0.3, seed=0)
    val, test = split_removed(s, seed=1)
    assert not (val & test).any()
    np.testing.assert_array_equal(val | test, s.removed)
    assert 0.3 < val.sum() / s.removed.sum() < 0.7


def test_split_removed_parts_are_nested_across_tau(graph):
    small, large = mask_remove(graph, 0.1, seed=3), mask_remove(graph, 0.4, seed=3)
    val_s, test_s = split_removed(small, seed=5)
    val_l, test_l = split_removed(large, seed=5)
    assert not (val_s & ~val_l).any() and not (test_s & ~test_l).any()


def test_split_removed_keeps_both_parts_non_empty(graph):
    s = mask_remove(graph, 0.3, seed=0)
    removed = np.zeros_like(s.removed)
    removed.flat[np.flatnonzero(s.removed)[:2]] = True
    s = dataclasses.replace(s, removed=removed)
    for seed in range(20):
        val, test = split_removed(s, seed=seed)
        assert val.sum() == 1 and test.sum() == 1


def test_edge_level_is_the_endpoint_mean(graph):
    s = mask_remove(graph, 0.2, seed=0)
    idx = edge_node_index(s)
    rows = np.random.default_rng(0).normal(size=(graph.num_node_layers, 3))
    out = edge_level(Tensor(rows), idx).data
    N = graph.num_nodes
    for t, e in [(0, 0), (5, len(s.pairs) - 1), (2, 3)]:
        u, v = s.pairs[e]
        np.testing.assert_allclose(out[t, e], 0.5 * (rows[u + N * t] + rows[v + N * t]))


def _inputs(rng, T=4, E=3, S=2):
    mask = (rng.random((T, E, S)) < 0.7).astype(float)
    values = rng.random((T, E, S)) * mask
    delta = np.transpose(delta_array(np.transpose(mask, (1, 2, 0))), (2, 0, 1)) / T
    return Tensor(values), Tensor(mask), Tensor(delta)


def test_mrnn_gradients():
    rng = np.random.default_rng(0)
    model = MRNN(2, 3, rng=rng)
    v, m, d = _inputs(rng)
    w = rng.normal(size=(4, 3, 2))
    assert check_module_gradients(lambda: (model(v, m, d) * w).sum(), model.parameters()) < 1e-4


def test_etmpgnn1_gradients_include_embeddings():
    rng = np.random.default_rng(1)
    model = ETMPGNN1(2, 2, 3, rng=rng)
    v, m, d = _inputs(rng)
    emb = parameter(rng.random((4, 3, 2)))
    w = rng.normal(size=(4, 3, 2))
    params = [emb] + model.parameters()
    assert check_module_gradients(lambda: (model(v, m, d, emb) * w).sum(), params) < 1e-4


@pytest.mark.parametrize("mix", ["scalar", "unit"])
def test_etmpgnn2_gradients(mix):
    rng = np.random.default_rng(2)
    model = ETMPGNN2(2, 3, 3, mix=mix, rng=rng)
    model.mix.data = rng.normal(size=model.mix.shape)
    v, m, d = _inputs(rng)
    tmp = parameter(rng.normal(size=(4, 3, 3)))
    w = rng.normal(size=(4, 3, 2))
    params = [tmp] + model.parameters()
    assert check_module_gradients(lambda: (model(v, m, d, tmp) * w).sum(), params) < 1e-4


def test_mix_weights_start_even_and_sum_to_one():
    model = ETMPGNN2(2, 3, 4, mix="unit", rng=0)
    np.testing.assert_allclose(model.mix_weights().data, 0.5)
    with pytest.raises(ValueError):
        ETMPGNN2(2, 3, 4, mix="gate")


def test_models_reject_wrong_widths():
    rng = np.random.default_rng(3)
    v, m, d = _inputs(rng)
    with pytest.raises(ValueError):
        ETMPGNN1(2, 2, 3, rng=0)(v, m, d)
    with pytest.raises(ValueError):
        ETMPGNN2(2, 3, 3, rng=0)(v, m, d, Tensor(np.zeros((4, 3, 5))))
    with pytest.raises(ValueError):
        MRNN(3, 3, rng=0)(v, m, d)


def test_zero_width_embedding_is_bit_identical_to_mrnn(graph):
    s = mask_remove(graph, 0.2, seed=4)
    base = EdgeImputer(arch=ARCH_MRNN, epochs=5, seed=11).fit(s, graph)
    reduced = EdgeImputer(arch=ARCH_ETMPGNN1, embed_dim=0, epochs=5, seed=11).fit(s, graph)
    assert base.predict().tobytes() == reduced.predict().tobytes()
    assert base.history_ == reduced.history_


def test_withheld_values_never_reach_the_model(graph):
    """Changing the true value of a removed cell must not change any estimate."""
    s = mask_remove(graph, 0.3, seed=5)
    pairs = s.pairs
    feats = graph.features.copy()
    for i, (t, u, v) in enumerate(zip(graph.layer, graph.src, graph.dst)):
        e = np.flatnonzero((pairs[:, 0] == u) & (pairs[:, 1] == v))[0]
        for d in range(graph.num_streams):
            if s.removed[e, d, t]:
                feats[i, d] = 1.0 - feats[i, d]
    tampered = TemporalMultilayerGraph(graph.num_nodes, graph.num_layers, graph.num_streams,
                                       graph.layer, graph.src, graph.dst, feats,
                                       directed=graph.directed, node_labels=graph.node_labels)
    s2 = mask_remove(tampered, 0.3, seed=5)
    np.testing.assert_array_equal(s2.values, s.values)
    for arch in (ARCH_ETMPGNN1, ARCH_ETMPGNN2):
        # truth only enters model selection: training losses and untrained
        # estimates must be unchanged
        a = EdgeImputer(arch=arch, epochs=3, seed=0).fit(s, graph)
        b = EdgeImputer(arch=arch, epochs=3, seed=0).fit(s2, tampered)
        assert [h[0] for h in a.history_] == [h[0] for h in b.history_]
        a_pred = EdgeImputer(arch=arch, epochs=0, seed=0).fit(s, graph).predict()
        b_pred = EdgeImputer(arch=arch, epochs=0, seed=0).fit(s2, tampered).predict()
        assert a_pred.tobytes() == b_pred.tobytes()


def test_structure_only_drops_values(graph):
    bare = structure_only(graph)
    assert bare.num_streams == 0 and bare.num_edges == graph.num_edges
    np.testing.assert_array_equal(bare.src, graph.src)


def test_imputer_estimator_api(graph):
    s = mask_remove(graph, 0.3, seed=0)
    est = EdgeImputer(arch=ARCH_ETMPGNN2, epochs=3, hidden_dim=4, seed=0)
    assert clone(est).get_params() == est.get_params()
    est.fit(s, graph)
    pred = est.predict()
    assert pred.shape == s.values.shape
    assert np.all((pred > 0) & (pred < 1))
    metrics = est.evaluate()
    assert metrics["rmse"] >= metrics["mae"] > 0
    assert est.score() == -metrics["mae"]
    assert len(est.history_) <= 3
    with pytest.raises(ValueError):
        EdgeImputer(arch=ARCH_ETMPGNN1, epochs=1).fit(s)
    with pytest.raises(ValueError):
        EdgeImputer(arch="gru", epochs=1).fit(s, graph)
    with pytest.raises(ValueError):
        EdgeImputer(hide_rate=0.0).fit(s, graph)


def test_training_reduces_error(graph):
    s = mask_remove(graph, 0.2, seed=0)
    untrained = EdgeImputer(arch=ARCH_MRNN, epochs=0, seed=0).fit(s, graph).evaluate()["mae"]
    trained = EdgeImputer(arch=ARCH_MRNN, epochs=40, seed=0).fit(s, graph).evaluate()["mae"]
    assert trained < untrained


def test_frozen_embeddings_keep_initial_weights(graph):
    s = mask_remove(graph, 0.2, seed=0)
    est = EdgeImputer(arch=ARCH_ETMPGNN1, epochs=3, freeze_embeddings=True, seed=0).fit(s, graph)
    init = EdgeImputer(arch=ARCH_ETMPGNN1, epochs=0, seed=0).fit(s, graph)
    for (k, a), b in zip(est.tmpgnn_.named_parameters().items(),
                         init.tmpgnn_.named_parameters().values()):
        np.testing.assert_array_equal(a.data, b.data, err_msg=k)


def test_evaluate_mae_report(graph):
    rep = evaluate_mae(graph, [0.2, 0.4], archs=(ARCH_MRNN, ARCH_ETMPGNN1), seeds=(0,),
                       epochs=2)
    assert rep["taus"] == [0.2, 0.4]
    assert len(rep["runs"]) == 4
    assert set(rep["mae"]) == {ARCH_MRNN, ARCH_ETMPGNN1}
    assert rep["improvement_vs_mrnn_pct"][ARCH_MRNN] == [0.0, 0.0]
