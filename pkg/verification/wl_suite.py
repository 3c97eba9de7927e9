"""
WL Suite - random-walk probe on 1-WL-equivalent graph pairs
"""
import logging

from polynormer.config import Variant
from polynormer.graphstore import Graph, gen_csl, wl_equivalent
from polynormer.model import wl_probe
from .base_suite import BaseSuite, SuiteReport

logger = logging.getLogger(__name__)

SEPARATION = 1e-3
PROBE_LAYERS = 2
PROBE_BETA = 1.0


def cycle(n: int, offset: int = 0):
    return [(offset + i, offset + (i + 1) % n) for i in range(n)]


def hexagon_pair():
    """C6 against two disjoint triangles, both 2-regular on six nodes"""
    return Graph.from_edges(6, cycle(6)), Graph.from_edges(6, cycle(3) + cycle(3, offset=3))


class WLSuite(BaseSuite):
    """v1 stays within 1-WL, v2 separates a 1-WL-equivalent pair"""

    def __init__(self, seed: int = None, workers: int = None):
        super().__init__("wl", seed, workers)

    def get_description(self) -> str:
        return "gate carrier v1 vs v2 on 1-WL-equivalent graphs"

    def run(self) -> SuiteReport:
        report = SuiteReport(suite=self.suite_name)
        hexagon, triangles = hexagon_pair()
        csl_a, csl_b = gen_csl(11, 2), gen_csl(11, 3)

        report.checks.append(self.check("pair-1wl-equivalent",
                                        wl_equivalent(hexagon, triangles) and wl_equivalent(csl_a, csl_b),
                                        "C6 vs 2xC3 and CSL(11,2) vs CSL(11,3)"))

        v1 = wl_probe(hexagon, triangles, PROBE_LAYERS, PROBE_BETA, Variant.V1)
        report.checks.append(self.check("v1-indistinguishable", not v1.distinguishable,
                                        "C6 vs 2xC3", v1.max_difference))
        v1_csl = wl_probe(csl_a, csl_b, PROBE_LAYERS, PROBE_BETA, Variant.V1)
        report.checks.append(self.check("v1-indistinguishable-csl", not v1_csl.distinguishable,
                                        "CSL(11,2) vs CSL(11,3)", v1_csl.max_difference))

        v2 = wl_probe(hexagon, triangles, PROBE_LAYERS, PROBE_BETA, Variant.V2)
        report.checks.append(self.check("v2-distinguishable", v2.max_difference > SEPARATION,
                                        f"C6 vs 2xC3, separation > {SEPARATION:g}", v2.max_difference))

        path = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
        star = Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])
        degrees = wl_probe(path, star, PROBE_LAYERS, PROBE_BETA, Variant.V1)
        report.checks.append(self.check("v1-degree-sequences", degrees.distinguishable,
                                        "path vs star", degrees.max_difference))
        return report
