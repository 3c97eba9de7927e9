"""
Grad Suite - central-difference checks of every differentiable kernel and layer
"""
from typing import Dict, List, Mapping
import logging

import numpy as np

from polynormer import diffmath as dm
from polynormer.attention import GlobalLayerParams, LocalLayerParams, global_layer, local_layer
from polynormer.config import LocalKind
from polynormer.diffmath import DiffValue
from polynormer.graphstore import Graph
from polynormer.training import nll_loss
from .base_suite import BaseSuite, SuiteReport

logger = logging.getLogger(__name__)

GRAD_TOLERANCE = 1e-4
STEP = 1e-5


def project(out: DiffValue, seed: int = 11) -> DiffValue:
    """Reduce to 1×1 through a fixed random weighting so every entry matters"""
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    return dm.sum_all(dm.hadamard(out, out.tape.constant(weights, "projection")))


class GradSuite(BaseSuite):
    """Compares reverse-mode gradients against finite differences"""

    def __init__(self, seed: int = None, workers: int = None):
        super().__init__("grad", seed, workers)

    def get_description(self) -> str:
        return "analytic gradients match central differences (h=1e-5, 64-bit)"

    def _away_from_zero(self, shape) -> np.ndarray:
        return self.rng.choice([-1.0, 1.0], size=shape) * self.rng.uniform(0.2, 1.0, size=shape)

    def kernel_cases(self) -> Dict[str, tuple]:
        r = self.rng
        ring = Graph.from_edges(5, [(i, (i + 1) % 5) for i in range(5)], self_loops=True)
        adj = ring.adjacency
        cases = {
            "matmul": (lambda p: dm.matmul(p["a"], p["b"]),
                       {"a": r.standard_normal((3, 4)), "b": r.standard_normal((4, 2))}),
            "transpose": (lambda p: dm.transpose(p["a"]), {"a": r.standard_normal((3, 2))}),
            "add": (lambda p: dm.add(p["a"], p["b"]),
                    {"a": r.standard_normal((2, 3)), "b": r.standard_normal((2, 3))}),
            "subtract": (lambda p: dm.subtract(p["a"], p["b"]),
                         {"a": r.standard_normal((2, 3)), "b": r.standard_normal((2, 3))}),
            "hadamard": (lambda p: dm.hadamard(p["a"], p["b"]),
                         {"a": r.standard_normal((2, 3)), "b": r.standard_normal((2, 3))}),
            "scale": (lambda p: dm.scale(p["a"], 2.5), {"a": r.standard_normal((2, 3))}),
            "sigmoid": (lambda p: dm.sigmoid(p["a"]), {"a": r.standard_normal((3, 3))}),
            "relu": (lambda p: dm.relu(p["a"]), {"a": self._away_from_zero((3, 3))}),
            "leaky-relu": (lambda p: dm.leaky_relu(p["a"]), {"a": self._away_from_zero((3, 3))}),
            "exponential": (lambda p: dm.exp(p["a"]), {"a": r.standard_normal((2, 3))}),
            "row-sum": (lambda p: dm.row_sum(p["a"]), {"a": r.standard_normal((3, 4))}),
            "column-sum": (lambda p: dm.col_sum(p["a"]), {"a": r.standard_normal((3, 4))}),
            "broadcast-row-vector": (lambda p: dm.broadcast_row(p["a"], 4), {"a": r.standard_normal((1, 3))}),
            "broadcast-col-vector": (lambda p: dm.broadcast_col(p["a"], 4), {"a": r.standard_normal((3, 1))}),
            "concat-cols": (lambda p: dm.concat_cols([p["a"], p["b"]]),
                            {"a": r.standard_normal((3, 2)), "b": r.standard_normal((3, 1))}),
            "slice-cols": (lambda p: dm.slice_cols(p["a"], 1, 3), {"a": r.standard_normal((3, 4))}),
            "elementwise-divide": (lambda p: dm.divide(p["a"], p["b"]),
                                   {"a": r.standard_normal((2, 3)), "b": r.uniform(0.5, 2.0, (2, 3))}),
            "gather-rows": (lambda p: dm.gather_rows(p["a"], np.array([2, 0, 2, 1])),
                            {"a": r.standard_normal((3, 2))}),
            "spmm": (lambda p: dm.spmm(adj, p["v"], values=p["values"]),
                     {"v": r.standard_normal((5, 3)), "values": r.standard_normal((adj.nnz, 1))}),
            "segment-softmax": (lambda p: dm.segment_softmax(p["s"], adj.indptr),
                                {"s": r.standard_normal((adj.nnz, 1))}),
            "layer-norm": (lambda p: dm.layer_norm_rows(p["x"], p["gain"], p["shift"]),
                           {"x": r.standard_normal((4, 5)), "gain": r.standard_normal((1, 5)),
                            "shift": r.standard_normal((1, 5))}),
            "log-softmax": (lambda p: dm.log_softmax_rows(p["x"]), {"x": r.standard_normal((4, 3))}),
        }
        return cases

    def layer_cases(self) -> Dict[str, tuple]:
        r = self.rng
        graph = Graph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)], self_loops=True)
        d, heads = 4, 2
        tape = dm.Tape()
        local = LocalLayerParams.random(tape, d, r)
        gcn = LocalLayerParams.random(tape, d, r, LocalKind.GCN)
        glob = GlobalLayerParams.random(tape, d, r)
        x = r.standard_normal((5, d))

        def numeric(params) -> Dict[str, np.ndarray]:
            return {k: v.value for k, v in vars(params).items() if v is not None}

        def split(p):
            return p["x"], {k: v for k, v in p.items() if k != "x"}

        labels = np.array([0, 2, 1, 1, 0])
        mask = np.array([True, True, False, True, True])
        return {
            "local-layer-gat": (lambda p: local_layer(split(p)[0], graph, LocalLayerParams(**split(p)[1]), heads),
                                {"x": x, **numeric(local)}),
            "local-layer-gcn": (lambda p: local_layer(split(p)[0], graph, LocalLayerParams(**split(p)[1]),
                                                      1, LocalKind.GCN),
                                {"x": x, **numeric(gcn)}),
            "global-layer": (lambda p: global_layer(split(p)[0], GlobalLayerParams(**split(p)[1]), heads),
                             {"x": x, **numeric(glob)}),
            "nll-loss": (lambda p: nll_loss(dm.log_softmax_rows(p["logits"]), labels, mask),
                         {"logits": r.standard_normal((5, 3))}),
        }

    def _run_case(self, item) -> tuple:
        name, (fn, params) = item

        def objective(p: Mapping[str, DiffValue]) -> DiffValue:
            out = fn(p)
            return out if out.shape == (1, 1) else project(out)

        return name, dm.grad_check(objective, params, STEP)

    def run(self) -> SuiteReport:
        report = SuiteReport(suite=self.suite_name)
        items: List[tuple] = list(self.kernel_cases().items()) + list(self.layer_cases().items())
        for name, err in self.run_parallel(self._run_case, items):
            report.checks.append(self.within(name, err, GRAD_TOLERANCE))
        return report
