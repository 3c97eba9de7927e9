"""
Equivariance Suite - relabeling nodes permutes every layer's output the same way
"""
from typing import Callable, List
import logging

import numpy as np

from polynormer import diffmath as dm
from polynormer.attention import (GlobalLayerParams, LocalLayerParams, dense_softmax_attention,
                                  gat_attention, global_layer, local_layer)
from polynormer.config import Activation, LocalKind, ModelConfig, Variant
from polynormer.graphstore import Dataset, Graph, Split, gen_er, permute_dataset, permute_graph
from polynormer.model import forward, init_model
from .base_suite import BaseSuite, SuiteReport

logger = logging.getLogger(__name__)

EQUIVARIANCE_TOLERANCE = 1e-8
TRIALS = 20


def unlabeled_dataset(graph: Graph, features: np.ndarray, num_classes: int = 3) -> Dataset:
    n = graph.n
    return Dataset(graph, features, np.full(n, -1, dtype=np.int64),
                   np.full(n, Split.NONE.value, dtype="<U1"), num_classes)


class EquivarianceSuite(BaseSuite):
    """f(P·input) = P·f(input) for layers, oracles and the full model"""

    def __init__(self, seed: int = None, workers: int = None, trials: int = TRIALS):
        super().__init__("equivariance", seed, workers)
        self.trials = trials

    def get_description(self) -> str:
        return "permutation equivariance of layers and full-model logits"

    def _instance(self, seed: int, max_n: int = 64):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, max_n + 1))
        graph = gen_er(n, min(1.0, 4.0 / n), int(rng.integers(2 ** 31)))
        perm = rng.permutation(n)
        return rng, graph, perm, np.argsort(perm)

    def _layer_trial(self, seed: int) -> float:
        rng, graph, perm, inv = self._instance(seed)
        d, heads = 8, int(rng.choice([1, 4]))
        x = rng.standard_normal((graph.n, d))
        looped, looped_p = graph.with_self_loops(), permute_graph(graph, perm).with_self_loops()
        worst = 0.0

        def both(fn: Callable[[dm.Tape, np.ndarray, Graph], np.ndarray]) -> float:
            base = fn(dm.Tape(), x, looped)
            moved = fn(dm.Tape(), x[inv], looped_p)
            return float(np.max(np.abs(moved - base[inv])))

        def local(kind):
            def run(tape, feats, g):
                params = LocalLayerParams.random(tape, d, np.random.default_rng(seed), kind)
                return local_layer(tape.leaf(feats), g, params, heads, kind).value
            return run

        def glob(tape, feats, g):
            params = GlobalLayerParams.random(tape, d, np.random.default_rng(seed))
            return global_layer(tape.leaf(feats), params, heads).value

        def softmax(tape, feats, g):
            w = np.random.default_rng(seed).standard_normal((3, d, d)) * 0.3
            return dense_softmax_attention(tape.leaf(feats), tape.leaf(w[0]), tape.leaf(w[1]),
                                           tape.leaf(w[2])).value

        for fn in (local(LocalKind.GAT), local(LocalKind.GCN), glob, softmax):
            worst = max(worst, both(fn))

        # attention matrix itself: A' = P A Pᵀ
        def attention(feats, g):
            tape = dm.Tape()
            params = LocalLayerParams.random(tape, d, np.random.default_rng(seed))
            return gat_attention(g, tape.leaf(feats), params, 0, heads).to_csr().toarray()

        a = attention(x, looped)
        a_p = attention(x[inv], looped_p)
        worst = max(worst, float(np.max(np.abs(a_p - a[np.ix_(inv, inv)]))))
        return worst

    def _model_trial(self, seed: int) -> float:
        rng, graph, perm, inv = self._instance(seed)
        config = ModelConfig(
            input_dim=5, hidden_dim=8, num_classes=3,
            local_layers=int(rng.integers(1, 4)), global_layers=int(rng.integers(0, 3)),
            heads=int(rng.choice([1, 4])),
            activation=(Activation.NONE, Activation.RELU)[int(rng.integers(2))],
            local_kind=(LocalKind.GAT, LocalKind.GCN)[int(rng.integers(2))],
            variant=Variant.V1 if seed % 2 else Variant.V2,
        )
        model = init_model(config, seed)
        dataset = unlabeled_dataset(graph, rng.standard_normal((graph.n, 5)))
        moved = permute_dataset(dataset, perm)
        carrier = model.carrier_for(graph)
        base = forward(model, dataset, carrier=carrier)
        # v2: the carrier is permuted along with the nodes
        out = forward(model, moved, carrier=None if carrier is None else carrier[inv])
        return float(np.max(np.abs(out - base[inv])))

    def run(self) -> SuiteReport:
        report = SuiteReport(suite=self.suite_name)
        seeds: List[int] = [self.child_seed() for _ in range(self.trials)]
        layer_worst = max(self.run_parallel(self._layer_trial, seeds))
        report.checks.append(self.within("layers", layer_worst, EQUIVARIANCE_TOLERANCE,
                                         f"{self.trials} permutations"))
        model_worst = max(self.run_parallel(self._model_trial, seeds))
        report.checks.append(self.within("model-logits", model_worst, EQUIVARIANCE_TOLERANCE,
                                         f"{self.trials} permutations, random configs"))
        return report
