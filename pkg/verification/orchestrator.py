"""
Suite Orchestrator - runs the verification suites and aggregates their reports
"""
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List, Optional, Sequence
import logging

from pydantic import BaseModel, Field

from .base_suite import BaseSuite, CheckResult, CheckStatus, SuiteReport
from .equivariance_suite import EquivarianceSuite
from .grad_suite import GradSuite
from .kernel_suite import KernelSuite
from .poly_suite import PolySuite
from .wl_suite import WLSuite

logger = logging.getLogger(__name__)

SUITES = {
    "grad": GradSuite,
    "equivariance": EquivarianceSuite,
    "kernel": KernelSuite,
    "poly": PolySuite,
    "wl": WLSuite,
}


class VerificationReport(BaseModel):
    started_at: str
    suites: Dict[str, SuiteReport] = Field(default_factory=dict)

    @property
    def checks(self) -> List[CheckResult]:
        return [c for report in self.suites.values() for c in report.checks]

    @property
    def summary(self) -> Dict[str, int]:
        checks = self.checks
        passed = sum(1 for c in checks if c.passed)
        return {
            "total_suites": len(self.suites),
            "suites_failed": sum(1 for r in self.suites.values() if not r.ok),
            "total_checks": len(checks),
            "passed": passed,
            "failed": len(checks) - passed,
        }

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.suites.values())


class SuiteOrchestrator:
    """Runs suites in order, reporting progress through an optional callback"""

    def __init__(self, seed: Optional[int] = None, progress_callback: Optional[Callable] = None,
                 workers: Optional[int] = None):
        self.seed = seed
        self.progress_callback = progress_callback
        self.workers = workers

    def _update_progress(self, suite: str, status: str, progress: float, message: str = ""):
        if self.progress_callback:
            self.progress_callback({
                "suite": suite,
                "status": status,  # "starting", "running", "completed", "error"
                "progress": progress,
                "message": message,
                "timestamp": datetime.now(timezone.utc).isoformat(),
            })

    def build(self, name: str) -> BaseSuite:
        if name not in SUITES:
            raise ValueError(f"unknown suite '{name}', expected one of {sorted(SUITES)} or 'all'")
        return SUITES[name](seed=self.seed, workers=self.workers)

    def run(self, names: Sequence[str]) -> VerificationReport:
        names = list(SUITES) if "all" in names else list(names)
        suites = [(name, self.build(name)) for name in names]
        report = VerificationReport(started_at=datetime.now(timezone.utc).isoformat())

        for idx, (name, suite) in enumerate(suites):
            self._update_progress(name, "starting", idx / len(suites), suite.get_description())
            try:
                self._update_progress(name, "running", (idx + 0.5) / len(suites))
                result = suite.run()
                report.suites[name] = result
                self._update_progress(name, "completed", (idx + 1) / len(suites),
                                      f"{result.passed}/{len(result.checks)} checks passed")
            except Exception as e:
                logger.error(f"Suite {name} failed: {str(e)}")
                report.suites[name] = SuiteReport(
                    suite=name,
                    checks=[CheckResult(suite=name, name="run", status=CheckStatus.FAIL, detail=str(e))],
                    error=str(e),
                )
                self._update_progress(name, "error", (idx + 1) / len(suites), f"{name} failed: {str(e)}")

        logger.info(f"Verification finished: {report.summary}")
        return report

    def get_suite_status(self) -> Dict[str, Any]:
        return {
            "total_suites": len(SUITES),
            "suites": {name: cls(seed=self.seed).get_description() for name, cls in SUITES.items()},
        }
