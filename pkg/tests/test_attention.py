import pytest
import numpy as np

from polynormer import attention
from polynormer import diffmath as dm
from polynormer.attention import (GlobalLayerParams, LocalLayerParams, dense_kernel_attention_oracle,
                                  dense_softmax_attention, gat_attention, gated_combine, gcn_adjacency,
                                  global_layer, kernel_attention, kernel_attention_scores,
                                  kernel_overflow_probe, local_layer, parallel_layer)
from polynormer.config import LocalKind
from polynormer.errors import DomainError, ShapeError
from polynormer.graphstore import Graph, gen_er, permute_graph

pytestmark = pytest.mark.unit


@pytest.fixture
def rng():
    return np.random.default_rng(21)


@pytest.fixture
def graph():
    return gen_er(12, 0.3, seed=2).with_self_loops()


def test_gat_rows_are_distributions(graph, rng):
    tape = dm.Tape()
    params = LocalLayerParams.random(tape, 4, rng)
    x = tape.leaf(rng.standard_normal((graph.n, 4)))
    csr = gat_attention(graph, x, params, head=0).to_csr()
    np.testing.assert_allclose(np.asarray(csr.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    assert np.all(csr.data > 0)
    np.testing.assert_array_equal(csr.indices, graph.adjacency.indices)
    np.testing.assert_array_equal(csr.indptr, graph.adjacency.indptr)


def test_isolated_node_attends_to_itself(rng):
    g = Graph.from_edges(3, [(0, 1)]).with_self_loops()
    tape = dm.Tape()
    params = LocalLayerParams.random(tape, 2, rng)
    csr = gat_attention(g, tape.leaf(rng.standard_normal((3, 2))), params, head=0).to_csr()
    assert csr[2, 2] == pytest.approx(1.0)


def test_gat_requires_attention_vectors(graph, rng):
    tape = dm.Tape()
    params = LocalLayerParams.random(tape, 4, rng, local_kind=LocalKind.GCN)
    with pytest.raises(DomainError):
        gat_attention(graph, tape.leaf(np.ones((graph.n, 4))), params, head=0)


def test_gcn_adjacency_is_symmetric(graph):
    norm = gcn_adjacency(graph).toarray()
    np.testing.assert_allclose(norm, norm.T, atol=1e-15)
    deg = graph.degrees() + 1.0
    assert norm[0, 0] == pytest.approx(1.0 / deg[0])


@pytest.mark.parametrize("heads", [1, 2, 4])
def test_kernel_attention_matches_dense_oracle(heads, rng):
    tape = dm.Tape()
    params = GlobalLayerParams.random(tape, 8, rng)
    x = tape.leaf(rng.standard_normal((40, 8)))
    linear = kernel_attention(x, params, heads).value
    dense = dense_kernel_attention_oracle(x, params, heads).value
    assert np.max(np.abs(linear - dense)) < 1e-10


def test_single_node_attention_returns_values(rng):
    tape = dm.Tape()
    params = GlobalLayerParams.random(tape, 4, rng)
    x = tape.leaf(rng.standard_normal((1, 4)))
    np.testing.assert_allclose(kernel_attention(x, params).value, x.value @ params.w_v.value, atol=1e-12)


def test_kernel_scores_rows_sum_to_one(rng):
    x = rng.standard_normal((25, 6))
    scores = kernel_attention_scores(x, rng.standard_normal((6, 6)), rng.standard_normal((6, 6)), heads=3)
    np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(scores > 0)


def test_kernel_scores_submatrix_matches_full(rng):
    x = rng.standard_normal((20, 4))
    wq, wk = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    full = kernel_attention_scores(x, wq, wk, heads=2)
    nodes = [3, 7, 11]
    sub = kernel_attention_scores(x, wq, wk, heads=2, rows=nodes, cols=nodes)
    np.testing.assert_allclose(sub, full[np.ix_(nodes, nodes)], atol=1e-14)


def test_gate_saturation_selects_attention_branch(rng):
    tape = dm.Tape()
    n, d = 5, 3
    av = tape.leaf(rng.standard_normal((n, d)))
    h = tape.leaf(rng.standard_normal((n, d)))
    out = gated_combine(av, h, tape.leaf(np.full((1, d), 40.0)), tape.leaf(np.ones((1, d))),
                        tape.leaf(np.zeros((1, d))))
    np.testing.assert_allclose(out.value, av.value, atol=1e-12)


def test_gate_closed_selects_layer_norm_branch(rng):
    tape = dm.Tape()
    n, d = 5, 3
    av = tape.leaf(rng.standard_normal((n, d)))
    h = tape.leaf(rng.standard_normal((n, d)))
    out = gated_combine(av, h, tape.leaf(np.full((1, d), -40.0)), tape.leaf(np.ones((1, d))),
                        tape.leaf(np.zeros((1, d))))
    np.testing.assert_allclose(out.value.mean(axis=1), 0.0, atol=1e-10)


@pytest.mark.parametrize("local_kind", [LocalKind.GAT, LocalKind.GCN])
def test_local_layer_is_permutation_equivariant(graph, rng, local_kind):
    perm = rng.permutation(graph.n)
    inverse = np.argsort(perm)
    features = rng.standard_normal((graph.n, 4))

    tape = dm.Tape()
    params = LocalLayerParams.random(tape, 4, rng, local_kind=local_kind)
    out = local_layer(tape.leaf(features), graph, params, heads=2, local_kind=local_kind).value
    moved = local_layer(tape.leaf(features[inverse]), permute_graph(graph, perm), params,
                        heads=2, local_kind=local_kind).value
    np.testing.assert_allclose(moved[perm], out, atol=1e-10)


def test_global_layer_is_permutation_equivariant(rng):
    perm = rng.permutation(15)
    features = rng.standard_normal((15, 4))
    tape = dm.Tape()
    params = GlobalLayerParams.random(tape, 4, rng)
    out = global_layer(tape.leaf(features), params, heads=2).value
    moved = global_layer(tape.leaf(features[np.argsort(perm)]), params, heads=2).value
    np.testing.assert_allclose(moved[perm], out, atol=1e-10)


def test_local_layer_rejects_row_mismatch(graph, rng):
    tape = dm.Tape()
    params = LocalLayerParams.random(tape, 4, rng)
    with pytest.raises(ShapeError):
        local_layer(tape.leaf(np.ones((graph.n + 1, 4))), graph, params)


def test_parallel_layer_shape(graph, rng):
    tape = dm.Tape()
    params = LocalLayerParams.random(tape, 4, rng)
    w_q = tape.leaf(rng.standard_normal((4, 4)))
    w_k = tape.leaf(rng.standard_normal((4, 4)))
    out = parallel_layer(tape.leaf(rng.standard_normal((graph.n, 4))), graph, params, w_q, w_k, heads=2)
    assert out.shape == (graph.n, 4)


def test_dense_softmax_rows_are_convex_combinations(rng):
    tape = dm.Tape()
    x = tape.leaf(rng.standard_normal((6, 3)))
    eye = tape.leaf(np.eye(3))
    out = dense_softmax_attention(x, tape.leaf(rng.standard_normal((3, 3))),
                                  tape.leaf(rng.standard_normal((3, 3))), eye).value
    assert np.all(out <= x.value.max(axis=0) + 1e-12)
    assert np.all(out >= x.value.min(axis=0) - 1e-12)


def test_dense_oracles_are_capped(monkeypatch, rng):
    monkeypatch.setattr(attention, "MAX_DENSE_NODES", 3)
    tape = dm.Tape()
    params = GlobalLayerParams.random(tape, 2, rng)
    with pytest.raises(DomainError):
        dense_kernel_attention_oracle(tape.leaf(np.ones((4, 2))), params)


def test_overflow_probe_separates_kernels():
    grown = kernel_overflow_probe(100_000, 1e6)
    assert grown["relu_denominator"] >= 1e5 * grown["sigmoid_denominator"]
    assert grown["sigmoid_within_bounds"]

    blown = kernel_overflow_probe(100_000, 1e35)
    assert blown["relu_float32_overflow"]
    assert blown["sigmoid_within_bounds"]
