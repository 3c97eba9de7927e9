"""
Kernel Suite - linear global attention equals its dense counterpart, and the
sigmoid kernel keeps the normalizer bounded where a ReLU kernel does not
"""
import logging

import numpy as np

from polynormer import diffmath as dm
from polynormer.attention import (GlobalLayerParams, dense_kernel_attention_oracle, kernel_attention,
                                  kernel_attention_scores, kernel_overflow_probe,
                                  sigmoid_kernel_denominator)
from .base_suite import BaseSuite, SuiteReport

logger = logging.getLogger(__name__)

FACTORIZATION_TOLERANCE = 1e-10
ROW_SUM_TOLERANCE = 1e-12
INSTANCES = 20
PROBE_ROWS = 100_000


class KernelSuite(BaseSuite):
    """Kernel factorization exactness and denominator stability"""

    def __init__(self, seed: int = None, workers: int = None, instances: int = INSTANCES):
        super().__init__("kernel", seed, workers)
        self.instances = instances

    def get_description(self) -> str:
        return "sigmoid-kernel attention factorization and denominator bounds"

    def _instance(self, seed: int):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 201))
        heads = int(rng.choice([1, 2, 4]))
        d = heads * int(rng.integers(1, 32 // heads + 1))
        tape = dm.Tape()
        params = GlobalLayerParams.random(tape, d, rng)
        x = tape.leaf(rng.standard_normal((n, d)))
        return x, params, heads

    def _factorization_trial(self, seed: int):
        x, params, heads = self._instance(seed)
        linear = kernel_attention(x, params, heads).value
        dense = dense_kernel_attention_oracle(x, params, heads).value
        scores = kernel_attention_scores(x.value, params.w_q.value, params.w_k.value, heads)
        row_error = float(np.max(np.abs(scores.sum(axis=1) - 1.0)))
        return float(np.max(np.abs(linear - dense))), row_error, bool(np.all(scores > 0))

    def _denominator_bounds(self) -> float:
        """Largest violation of 0 < Σσ(K) < n over random keys, zero when bounded"""
        worst = 0.0
        for scale in (1e-3, 1.0, 1e3, 1e6):
            n = int(self.rng.integers(1, 500))
            den = sigmoid_kernel_denominator(scale * self.rng.standard_normal((n, 8)))
            worst = max(worst, float(np.max(np.maximum(0.0, den - n))), float(np.max(np.maximum(0.0, -den))))
        return worst

    def run(self) -> SuiteReport:
        report = SuiteReport(suite=self.suite_name)
        seeds = [self.child_seed() for _ in range(self.instances)]
        trials = self.run_parallel(self._factorization_trial, seeds)
        report.checks.append(self.within("factorization", max(t[0] for t in trials),
                                         FACTORIZATION_TOLERANCE, f"{self.instances} instances, n<=200, d<=32"))
        report.checks.append(self.within("dense-row-sums", max(t[1] for t in trials), ROW_SUM_TOLERANCE))
        report.checks.append(self.check("dense-positivity", all(t[2] for t in trials),
                                        "all attention entries strictly positive"))
        report.checks.append(self.check("sigmoid-denominator-bounds", self._denominator_bounds() == 0.0,
                                        "entries within (0, n)"))

        moderate = kernel_overflow_probe(PROBE_ROWS, 1e6, width=8)
        report.checks.append(self.check(
            "relu-denominator-growth",
            moderate["relu_denominator"] >= 1e5 * moderate["sigmoid_denominator"]
            and moderate["sigmoid_within_bounds"],
            f"relu={moderate['relu_denominator']:.3e} sigmoid={moderate['sigmoid_denominator']:.3e}",
        ))
        extreme = kernel_overflow_probe(PROBE_ROWS, 1e35, width=8)
        report.checks.append(self.check(
            "relu-float32-overflow",
            extreme["relu_float32_overflow"] and extreme["sigmoid_within_bounds"],
            f"relu={extreme['relu_denominator']:.3e} exceeds float32 range, sigmoid stays <= n",
        ))
        return report
