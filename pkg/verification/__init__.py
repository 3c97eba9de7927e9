# Property suites behind the `verify` command
from .base_suite import BaseSuite, CheckResult, CheckStatus, SuiteReport
from .equivariance_suite import EquivarianceSuite
from .grad_suite import GradSuite
from .kernel_suite import KernelSuite
from .orchestrator import SUITES, SuiteOrchestrator, VerificationReport
from .poly_suite import PolySuite
from .wl_suite import WLSuite

__all__ = [
    'BaseSuite',
    'CheckResult',
    'CheckStatus',
    'SuiteReport',
    'GradSuite',
    'EquivarianceSuite',
    'KernelSuite',
    'PolySuite',
    'WLSuite',
    'SuiteOrchestrator',
    'VerificationReport',
    'SUITES',
]
