"""
Base Suite class for all property suites run by `verify`
"""
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor, as_completed
from enum import Enum
from typing import Any, Callable, List, Optional, Sequence, TypeVar
import logging

import numpy as np
from pydantic import BaseModel, Field

from polynormer.config import DEFAULT_SEED, VERIFY_WORKERS

logger = logging.getLogger(__name__)

T = TypeVar("T")


class CheckStatus(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"


class CheckResult(BaseModel):
    suite: str
    name: str
    status: CheckStatus
    detail: str = ""
    max_deviation: Optional[float] = None

    @property
    def passed(self) -> bool:
        return self.status is CheckStatus.PASS

    def line(self) -> str:
        text = f"{self.status.value} {self.suite}.{self.name}"
        if self.max_deviation is not None:
            text += f" max_deviation={self.max_deviation:.3e}"
        return f"{text} {self.detail}".rstrip()


class SuiteReport(BaseModel):
    suite: str
    checks: List[CheckResult] = Field(default_factory=list)
    error: Optional[str] = None

    @property
    def passed(self) -> int:
        return sum(1 for c in self.checks if c.passed)

    @property
    def failed(self) -> int:
        return len(self.checks) - self.passed

    @property
    def ok(self) -> bool:
        return self.error is None and self.failed == 0


class BaseSuite(ABC):
    """Base class for all verification suites"""

    def __init__(self, suite_name: str, seed: Optional[int] = None, workers: Optional[int] = None):
        self.suite_name = suite_name
        self.seed = DEFAULT_SEED if seed is None else seed
        self.workers = workers or VERIFY_WORKERS
        self.rng = np.random.default_rng(self.seed)

    @abstractmethod
    def get_description(self) -> str:
        """One-line description of the property under test"""
        pass

    @abstractmethod
    def run(self) -> SuiteReport:
        """Run every check and return the report"""
        pass

    def check(self, name: str, passed: bool, detail: str = "",
              max_deviation: Optional[float] = None) -> CheckResult:
        result = CheckResult(
            suite=self.suite_name,
            name=name,
            status=CheckStatus.PASS if passed else CheckStatus.FAIL,
            detail=detail,
            max_deviation=None if max_deviation is None else float(max_deviation),
        )
        log = logger.info if passed else logger.warning
        log(f"{self.suite_name}: {result.line()}")
        return result

    def within(self, name: str, deviation: float, tolerance: float, detail: str = "") -> CheckResult:
        return self.check(name, bool(deviation < tolerance), detail or f"tolerance={tolerance:g}", deviation)

    def run_parallel(self, fn: Callable[[T], Any], items: Sequence[T]) -> List[Any]:
        """Fan fn out over items on a thread pool; results keep the input order"""
        if not items:
            return []
        results: List[Any] = [None] * len(items)
        with ThreadPoolExecutor(max_workers=min(self.workers, len(items))) as executor:
            futures = {executor.submit(fn, item): idx for idx, item in enumerate(items)}
            for future in as_completed(futures):
                results[futures[future]] = future.result()
        return results

    def child_seed(self) -> int:
        return int(self.rng.integers(2 ** 31))
