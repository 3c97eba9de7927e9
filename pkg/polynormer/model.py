"""
Polynormer assembly: input projection, local attention layers summed into
X_local, global attention layers, prediction head. Also hosts the
random-walk WL probe.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
import logging
import zlib

import numpy as np

from . import diffmath as dm
from .attention import (GlobalLayerParams, LocalLayerParams, global_layer, local_layer,
                        parallel_layer)
from .config import Activation, LocalKind, ModelConfig, Scheme, Stage, Variant
from .diffmath import DiffValue, Tape
from .errors import DomainError, ShapeError
from .graphstore import Dataset, Graph, fiedler_vector

logger = logging.getLogger(__name__)

WL_TOLERANCE = 1e-9


@dataclass
class PolynormerModel:
    config: ModelConfig
    params: Dict[str, np.ndarray]
    seed: int = 0
    # stage whose forward produced the selected validation metric
    stage: Stage = Stage.FULL
    # v2 gate carriers per graph fingerprint
    carriers: Dict[Tuple, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "PolynormerModel":
        return PolynormerModel(self.config, {k: v.copy() for k, v in self.params.items()},
                               self.seed, self.stage, dict(self.carriers))

    def carrier_for(self, graph: Graph) -> Optional[np.ndarray]:
        if self.config.variant is not Variant.V2:
            return None
        key = graph.without_self_loops().fingerprint()
        if key not in self.carriers:
            if graph.n < 2:
                logger.warning("Graph with a single node has no Fiedler vector; using the all-ones carrier")
                self.carriers[key] = np.ones(graph.n)
            else:
                self.carriers[key] = fiedler_vector(graph)
        return self.carriers[key]


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, int]]:
    """Every parameter name with its shape, in checkpoint order"""
    d, c = config.hidden_dim, config.num_classes
    shapes: Dict[str, Tuple[int, int]] = {
        "input.weight": (config.input_dim, d),
        "input.bias": (1, d),
    }

    def local_block(prefix: str) -> None:
        shapes[f"{prefix}.w_v"] = (d, d)
        shapes[f"{prefix}.w_h"] = (d, d)
        shapes[f"{prefix}.beta"] = (1, d)
        if config.local_kind is LocalKind.GAT:
            shapes[f"{prefix}.att_src"] = (1, d)
            shapes[f"{prefix}.att_dst"] = (1, d)
        shapes[f"{prefix}.ln_gain"] = (1, d)
        shapes[f"{prefix}.ln_shift"] = (1, d)

    if config.scheme is Scheme.LOCAL_AND_GLOBAL:
        for layer in range(config.local_layers + config.global_layers):
            local_block(f"parallel.{layer}")
            shapes[f"parallel.{layer}.w_q"] = (d, d)
            shapes[f"parallel.{layer}.w_k"] = (d, d)
    else:
        for layer in range(config.local_layers):
            local_block(f"local.{layer}")
        for layer in range(config.global_layers):
            for name in ("w_q", "w_k", "w_v", "w_h"):
                shapes[f"global.{layer}.{name}"] = (d, d)
            for name in ("beta", "ln_gain", "ln_shift"):
                shapes[f"global.{layer}.{name}"] = (1, d)

    shapes["head.weight"] = (d, c)
    shapes["head.bias"] = (1, c)
    return shapes


def _glorot(rng: np.random.Generator, shape: Tuple[int, int]) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def init_model(config: ModelConfig, seed: int) -> PolynormerModel:
    """
    Glorot-uniform weights, zero biases and β, LayerNorm gain 1 and shift 0.

    Each weight draws from a stream keyed by (seed, name), so parameters
    shared by two configs start out identical.
    """
    params: Dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf in ("bias", "beta", "ln_shift"):
            params[name] = np.zeros(shape)
        elif leaf == "ln_gain":
            params[name] = np.ones(shape)
        else:
            params[name] = _glorot(np.random.default_rng([seed, zlib.crc32(name.encode())]), shape)
    model = PolynormerModel(config, params, seed)
    logger.info(f"Initialized model with {model.parameter_count} parameters (seed {seed})")
    return model


def bind_parameters(model: PolynormerModel, tape: Tape) -> Dict[str, DiffValue]:
    return {name: tape.leaf(value, name) for name, value in model.params.items()}


def _local_params(leaves: Dict[str, DiffValue], prefix: str) -> LocalLayerParams:
    return LocalLayerParams(
        w_v=leaves[f"{prefix}.w_v"],
        w_h=leaves[f"{prefix}.w_h"],
        beta=leaves[f"{prefix}.beta"],
        ln_gain=leaves[f"{prefix}.ln_gain"],
        ln_shift=leaves[f"{prefix}.ln_shift"],
        att_src=leaves.get(f"{prefix}.att_src"),
        att_dst=leaves.get(f"{prefix}.att_dst"),
    )


def global_params(leaves: Dict[str, DiffValue], layer: int) -> GlobalLayerParams:
    prefix = f"global.{layer}"
    return GlobalLayerParams(
        w_q=leaves[f"{prefix}.w_q"],
        w_k=leaves[f"{prefix}.w_k"],
        w_v=leaves[f"{prefix}.w_v"],
        w_h=leaves[f"{prefix}.w_h"],
        beta=leaves[f"{prefix}.beta"],
        ln_gain=leaves[f"{prefix}.ln_gain"],
        ln_shift=leaves[f"{prefix}.ln_shift"],
    )


@dataclass
class ForwardTrace:
    """Per-layer inputs and outputs of one forward pass"""
    local_inputs: List[np.ndarray] = field(default_factory=list)
    local_outputs: List[np.ndarray] = field(default_factory=list)
    global_inputs: List[np.ndarray] = field(default_factory=list)
    global_outputs: List[np.ndarray] = field(default_factory=list)
    x_local: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None


def _dropout(x: DiffValue, rate: float, rng: Optional[np.random.Generator]) -> DiffValue:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return dm.hadamard(x, x.tape.constant(keep, "dropout"))


def forward_graph(model: PolynormerModel, dataset: Dataset, leaves: Dict[str, DiffValue],
                  stage: Stage = Stage.FULL, rng: Optional[np.random.Generator] = None,
                  dropout: Optional[float] = None, carrier: Optional[np.ndarray] = None,
                  trace: Optional[ForwardTrace] = None) -> DiffValue:
    """
    Differentiable forward pass producing n×c logits.

    Dropout is applied only when an rng is given (training forwards).
    For the v2 variant an explicit carrier overrides the cached Fiedler
    vector of the dataset's graph.
    """
    config = model.config
    if dataset.feature_dim != config.input_dim:
        raise ShapeError(f"dataset feature dim {dataset.feature_dim} does not match "
                         f"model input dim {config.input_dim}")
    rate = config.dropout if dropout is None else dropout
    graph = dataset.graph.with_self_loops()
    if config.variant is Variant.V2:
        carrier = model.carrier_for(dataset.graph) if carrier is None else np.asarray(carrier, dtype=np.float64)
        if carrier.shape != (dataset.n,):
            raise ShapeError(f"carrier has shape {carrier.shape}, expected ({dataset.n},)")
    else:
        carrier = None
    relu = config.activation is Activation.RELU

    tape = next(iter(leaves.values())).tape
    x = tape.constant(dataset.features, "features")
    x = dm.add(dm.matmul(_dropout(x, rate, rng), leaves["input.weight"]),
               dm.broadcast_row(leaves["input.bias"], dataset.n))

    if config.scheme is Scheme.LOCAL_AND_GLOBAL:
        # one parallel stack; the warm-up stage has no separate module to train
        for layer in range(config.local_layers + config.global_layers):
            prefix = f"parallel.{layer}"
            inp = _dropout(x, rate, rng)
            x = parallel_layer(inp, graph, _local_params(leaves, prefix), leaves[f"{prefix}.w_q"],
                               leaves[f"{prefix}.w_k"], config.heads, config.local_kind, carrier)
            if relu:
                x = dm.relu(x)
            if trace is not None:
                trace.local_inputs.append(inp.value)
                trace.local_outputs.append(x.value)
        x_local = x
    else:
        x_local = None
        for layer in range(config.local_layers):
            inp = _dropout(x, rate, rng)
            x = local_layer(inp, graph, _local_params(leaves, f"local.{layer}"),
                            config.heads, config.local_kind, carrier)
            if relu:
                x = dm.relu(x)
            x_local = x if x_local is None else dm.add(x_local, x)
            if trace is not None:
                trace.local_inputs.append(inp.value)
                trace.local_outputs.append(x.value)
        x = x_local
        if Stage(stage) is Stage.FULL:
            for layer in range(config.global_layers):
                inp = _dropout(x, rate, rng)
                x = global_layer(inp, global_params(leaves, layer), config.heads, carrier)
                if relu:
                    x = dm.relu(x)
                if trace is not None:
                    trace.global_inputs.append(inp.value)
                    trace.global_outputs.append(x.value)

    logits = dm.add(dm.matmul(_dropout(x, rate, rng), leaves["head.weight"]),
                    dm.broadcast_row(leaves["head.bias"], dataset.n))
    if trace is not None:
        trace.x_local = x_local.value
        trace.logits = logits.value
    return logits


def forward(model: PolynormerModel, dataset: Dataset, stage: Stage = Stage.FULL,
            training: bool = False, seed: Optional[int] = None,
            carrier: Optional[np.ndarray] = None) -> np.ndarray:
    """Logits as a plain array; training=True enables dropout under the given seed"""
    tape = Tape()
    rng = np.random.default_rng(seed) if training else None
    return forward_graph(model, dataset, bind_parameters(model, tape), stage,
                         rng=rng, carrier=carrier).value


def forward_trace(model: PolynormerModel, dataset: Dataset, stage: Stage = Stage.FULL,
                  carrier: Optional[np.ndarray] = None) -> ForwardTrace:
    tape = Tape()
    trace = ForwardTrace()
    forward_graph(model, dataset, bind_parameters(model, tape), stage, carrier=carrier, trace=trace)
    return trace


# ---------------------------------------------------------------------------
# random-walk WL probe
# ---------------------------------------------------------------------------

@dataclass
class WLProbeResult:
    outputs_a: np.ndarray
    outputs_b: np.ndarray
    distinguishable: bool

    @property
    def max_difference(self) -> float:
        return float(np.max(np.abs(self.outputs_a - self.outputs_b)))


def _random_walk_propagate(graph: Graph, layers: int, beta: float, variant: Variant) -> np.ndarray:
    adj = graph.without_self_loops().adjacency
    deg = np.asarray(adj.sum(axis=0)).ravel()
    inv = np.zeros_like(deg)
    np.divide(1.0, deg, out=inv, where=deg > 0)
    walk = adj.multiply(inv[None, :]).tocsr()
    if Variant(variant) is Variant.V2:
        bias = beta * fiedler_vector(graph)
    else:
        bias = np.full(graph.n, float(beta))
    x = np.ones(graph.n)
    for _ in range(layers):
        x = (walk @ x) * (x + bias)
    return np.sort(x)


def wl_probe(graph_a: Graph, graph_b: Graph, layers: int, beta: float,
             variant: Variant = Variant.V1) -> WLProbeResult:
    """
    Runs X ← (Â X) ⊙ (X + b) with Â = A D⁻¹ and uniform features on both
    graphs and compares the sorted node outputs.
    """
    if graph_a.n != graph_b.n:
        raise DomainError(f"wl_probe needs graphs of equal size, got {graph_a.n} and {graph_b.n}")
    if layers < 1:
        raise DomainError(f"wl_probe needs at least one layer, got {layers}")
    out_a = _random_walk_propagate(graph_a, layers, beta, variant)
    out_b = _random_walk_propagate(graph_b, layers, beta, variant)
    result = WLProbeResult(out_a, out_b, bool(np.max(np.abs(out_a - out_b)) > WL_TOLERANCE))
    logger.info(f"WL probe ({Variant(variant).value}, L={layers}, beta={beta}): "
                f"max difference {result.max_difference:.3e}")
    return result
