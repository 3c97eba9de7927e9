import pytest
import numpy as np

from polynormer.config import Activation, LocalKind, ModelConfig, Scheme, Stage, Variant
from polynormer.errors import DomainError, ShapeError
from polynormer.graphstore import Graph, gen_sbm, permute_dataset
from polynormer.model import forward, forward_trace, init_model, parameter_shapes, wl_probe

pytestmark = pytest.mark.unit


@pytest.fixture
def dataset():
    return gen_sbm(60, 3, 0.2, 0.02, 6, 0.3, seed=1)


@pytest.fixture
def config():
    return ModelConfig(input_dim=6, hidden_dim=8, local_layers=2, global_layers=1, heads=2, num_classes=3)


def hexagon():
    return Graph.from_edges(6, [(i, (i + 1) % 6) for i in range(6)])


def triangles():
    return Graph.from_edges(6, [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)])


def test_parameter_names_for_default_scheme(config):
    shapes = parameter_shapes(config)
    assert shapes["input.weight"] == (6, 8)
    assert shapes["local.1.att_src"] == (1, 8)
    assert shapes["global.0.w_q"] == (8, 8)
    assert shapes["head.weight"] == (8, 3)
    assert not any(name.startswith("parallel.") for name in shapes)


def test_gcn_has_no_attention_vectors(config):
    shapes = parameter_shapes(config.model_copy(update={"local_kind": LocalKind.GCN}))
    assert not any("att_" in name for name in shapes)


def test_parallel_scheme_parameters(config):
    shapes = parameter_shapes(config.model_copy(update={"scheme": Scheme.LOCAL_AND_GLOBAL}))
    assert "parallel.2.w_q" in shapes
    assert not any(name.startswith(("local.", "global.")) for name in shapes)


def test_init_is_seeded(config):
    a, b, c = init_model(config, 3), init_model(config, 3), init_model(config, 4)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name], b.params[name])
    assert not np.array_equal(a.params["input.weight"], c.params["input.weight"])
    np.testing.assert_array_equal(a.params["local.0.beta"], 0.0)
    np.testing.assert_array_equal(a.params["global.0.ln_gain"], 1.0)


def test_forward_shape_and_determinism(config, dataset):
    model = init_model(config, 0)
    logits = forward(model, dataset)
    assert logits.shape == (dataset.n, 3)
    np.testing.assert_array_equal(logits, forward(model, dataset))


def test_dropout_only_in_training(config, dataset):
    model = init_model(config.model_copy(update={"dropout": 0.5}), 0)
    eval_a, eval_b = forward(model, dataset), forward(model, dataset)
    np.testing.assert_array_equal(eval_a, eval_b)
    trained = forward(model, dataset, training=True, seed=1)
    assert not np.allclose(trained, eval_a)
    np.testing.assert_array_equal(trained, forward(model, dataset, training=True, seed=1))


def test_warmup_ignores_global_layers(config, dataset):
    model = init_model(config, 0)
    before = forward(model, dataset, Stage.WARMUP)
    model.params["global.0.w_v"] = model.params["global.0.w_v"] * 5.0
    np.testing.assert_array_equal(before, forward(model, dataset, Stage.WARMUP))
    assert not np.allclose(forward(model, dataset, Stage.FULL), forward(init_model(config, 0), dataset))


@pytest.mark.parametrize("update", [
    {},
    {"activation": Activation.RELU},
    {"local_kind": LocalKind.GCN},
    {"scheme": Scheme.LOCAL_AND_GLOBAL},
])
def test_forward_is_permutation_equivariant(config, dataset, update):
    model = init_model(config.model_copy(update=update), 5)
    perm = np.random.default_rng(0).permutation(dataset.n)
    out = forward(model, dataset)
    moved = forward(model, permute_dataset(dataset, perm))
    np.testing.assert_allclose(moved[perm], out, atol=1e-8)


def test_v2_uses_carrier(config, dataset):
    model = init_model(config.model_copy(update={"variant": Variant.V2}), 0)
    carrier = model.carrier_for(dataset.graph)
    assert carrier.shape == (dataset.n,)
    assert model.carrier_for(dataset.graph) is carrier
    with pytest.raises(ShapeError):
        forward(model, dataset, carrier=np.ones(dataset.n + 1))


def test_feature_dim_mismatch(config, dataset):
    model = init_model(config.model_copy(update={"input_dim": 7}), 0)
    with pytest.raises(ShapeError):
        forward(model, dataset)


def test_forward_trace_records_layers(config, dataset):
    trace = forward_trace(init_model(config, 0), dataset)
    assert len(trace.local_outputs) == 2
    assert len(trace.global_inputs) == 1
    np.testing.assert_allclose(trace.x_local, trace.local_outputs[0] + trace.local_outputs[1])


def test_wl_probe_v1_cannot_separate_regular_pair():
    result = wl_probe(hexagon(), triangles(), layers=2, beta=1.0, variant=Variant.V1)
    assert not result.distinguishable


def test_wl_probe_v2_separates_regular_pair():
    result = wl_probe(hexagon(), triangles(), layers=2, beta=1.0, variant=Variant.V2)
    assert result.max_difference > 1e-3


def test_wl_probe_needs_equal_sizes():
    with pytest.raises(DomainError):
        wl_probe(hexagon(), Graph.from_edges(5, [(0, 1)]), layers=1, beta=1.0)


def test_shared_parameters_match_across_configs(config):
    local_only = init_model(config.model_copy(update={"global_layers": 0}), 3)
    full = init_model(config, 3)
    for name, tensor in local_only.params.items():
        np.testing.assert_array_equal(full.params[name], tensor)
