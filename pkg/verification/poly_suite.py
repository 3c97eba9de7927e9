"""
Poly Suite - symbolic checks of polynomial expressivity on tiny graphs
"""
from itertools import product
from typing import List, Tuple
import logging

import numpy as np

from polynormer.polyoracle import (BaseModelWeights, MPoly, base_expand, base_numeric,
                                   closed_form_expand, cubic_witness_weights, degree_spectrum,
                                   exponents_of, gt_layer_expand, is_targeted_monomial,
                                   min_degree_with_bias, select_monomial_params)
from .base_suite import BaseSuite, SuiteReport

logger = logging.getLogger(__name__)

COEFFICIENT_TOLERANCE = 1e-9
NUMERIC_TOLERANCE = 1e-8
DRAWS = 50
POINTS = 10


class PolySuite(BaseSuite):
    """Base-model expansion, closed form, monomial selection and degree claims"""

    def __init__(self, seed: int = None, workers: int = None, draws: int = DRAWS):
        super().__init__("poly", seed, workers)
        self.draws = draws

    def get_description(self) -> str:
        return "polynomial expressivity of the base model on n<=3, L<=2"

    def _targeted_sweep(self, case: Tuple[int, int]) -> Tuple[int, int]:
        """Count (passed, total) over every node and target tuple"""
        n, layers = case
        passed = total = 0
        for i in range(n):
            for targets in product(range(n), repeat=2 ** layers - 1):
                polys = base_expand(select_monomial_params(i, targets, n, layers))
                passed += is_targeted_monomial(polys[i], i, targets, COEFFICIENT_TOLERANCE)
                total += 1
        return passed, total

    def _closed_form_trial(self, case: Tuple[int, int, int]) -> float:
        n, layers, seed = case
        weights = BaseModelWeights.random(n, layers, np.random.default_rng(seed))
        by_recurrence = base_expand(weights)
        by_chain = closed_form_expand(weights)
        return max(a.max_difference(b) for a, b in zip(by_recurrence, by_chain))

    def _numeric_trial(self, case: Tuple[int, int, int]) -> float:
        n, layers, seed = case
        rng = np.random.default_rng(seed)
        weights = BaseModelWeights.random(n, layers, rng, bias_layers=range(1, layers + 1))
        polys = base_expand(weights)
        worst = 0.0
        for _ in range(POINTS):
            point = rng.uniform(-1.5, 1.5, size=n)
            direct = base_numeric(weights, point)
            for poly, value in zip(polys, direct):
                worst = max(worst, abs(poly.evaluate(point) - value) / max(1.0, abs(value)))
        return worst

    def _relabeling_trial(self, seed: int) -> float:
        """Conjugating W by P and permuting B permutes the node polynomials"""
        rng = np.random.default_rng(seed)
        n, layers = 3, 2
        weights = BaseModelWeights.random(n, layers, rng, bias_layers=[1, 2])
        perm = rng.permutation(n)
        inv = np.argsort(perm)
        moved = BaseModelWeights([w[np.ix_(inv, inv)] for w in weights.w], [b[inv] for b in weights.b])
        base, out = base_expand(weights), base_expand(moved)
        worst = 0.0
        for i in range(n):
            renamed = MPoly(n, {tuple(e[inv[k]] for k in range(n)): c for e, c in base[i].terms.items()})
            worst = max(worst, out[perm[i]].max_difference(renamed))
        return worst

    def run(self) -> SuiteReport:
        report = SuiteReport(suite=self.suite_name)

        sweeps = [(3, 1), (3, 2)]
        for (n, layers), (passed, total) in zip(sweeps, self.run_parallel(self._targeted_sweep, sweeps)):
            report.checks.append(self.check(f"targeted-monomials-n{n}-L{layers}", passed == total,
                                            f"{passed}/{total} targets realized exactly"))

        cases = [(n, layers, self.child_seed()) for n in (2, 3) for layers in (1, 2) for _ in range(self.draws)]
        report.checks.append(self.within("closed-form", max(self.run_parallel(self._closed_form_trial, cases)),
                                         COEFFICIENT_TOLERANCE, f"{len(cases)} draws, B=0"))
        numeric_cases = [(n, layers, self.child_seed()) for n in (2, 3) for layers in (1, 2)]
        report.checks.append(self.within("numeric-consistency",
                                         max(self.run_parallel(self._numeric_trial, numeric_cases)),
                                         NUMERIC_TOLERANCE, f"{POINTS} points per draw"))

        generic = base_expand(BaseModelWeights.random(3, 2, self.rng, bias_layers=[1, 2]))
        bias_free = base_expand(BaseModelWeights.random(3, 2, self.rng))
        report.checks.append(self.check("degree-range-with-bias", degree_spectrum(generic) == {1, 2, 3, 4},
                                        f"spectrum={sorted(degree_spectrum(generic))}"))
        report.checks.append(self.check("degree-range-bias-free", degree_spectrum(bias_free) == {4},
                                        f"spectrum={sorted(degree_spectrum(bias_free))}"))
        lowest_ok = True
        for chosen in ([], [1], [2], [1, 2]):
            polys = base_expand(BaseModelWeights.random(3, 2, self.rng, bias_layers=chosen))
            lowest_ok &= min(degree_spectrum(polys)) == min_degree_with_bias(2, chosen)
        report.checks.append(self.check("lowest-degree-with-bias", lowest_ok, "2^(L-k) for k biased layers"))

        cubic = exponents_of((0, 0, 1), 2)
        gt_zero = all(gt_layer_expand(2, *self.rng.uniform(-2, 2, size=3)).degree3[0][cubic] == 0.0
                      for _ in range(self.draws))
        witness = base_expand(cubic_witness_weights())[0]
        report.checks.append(self.check(
            "attention-layer-gap",
            gt_zero and witness.terms == {exponents_of((0, 0, 1), 3): 1.0},
            "quadratic attention never yields x0^2*x1; the base model yields it exactly",
        ))

        seeds: List[int] = [self.child_seed() for _ in range(10)]
        report.checks.append(self.within("relabeling", max(self.run_parallel(self._relabeling_trial, seeds)),
                                         COEFFICIENT_TOLERANCE, "10 random relabelings"))
        return report
