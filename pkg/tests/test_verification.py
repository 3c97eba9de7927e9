from unittest.mock import MagicMock, patch

import pytest

from verification import (BaseSuite, CheckResult, CheckStatus, EquivarianceSuite, GradSuite, KernelSuite,
                          PolySuite, SuiteOrchestrator, SuiteReport, WLSuite)


class PassingSuite(BaseSuite):
    def __init__(self, seed=None, workers=None):
        super().__init__("passing", seed, workers)

    def get_description(self):
        return "always passes"

    def run(self):
        return SuiteReport(suite=self.suite_name, checks=[self.check("ok", True)])


class ExplodingSuite(BaseSuite):
    def __init__(self, seed=None, workers=None):
        super().__init__("exploding", seed, workers)

    def get_description(self):
        return "raises"

    def run(self):
        raise RuntimeError("boom")


@pytest.fixture
def fake_suites():
    with patch.dict("verification.orchestrator.SUITES", {"passing": PassingSuite, "exploding": ExplodingSuite},
                    clear=True):
        yield


def test_check_line_format():
    result = CheckResult(suite="kernel", name="factorization", status=CheckStatus.PASS,
                         detail="tolerance=1e-10", max_deviation=2.5e-14)
    assert result.line() == "PASS kernel.factorization max_deviation=2.500e-14 tolerance=1e-10"


def test_within_is_strict():
    suite = PassingSuite(seed=0)
    assert suite.within("x", 0.5, 1.0).passed
    assert not suite.within("x", 1.0, 1.0).passed


def test_run_parallel_preserves_order():
    suite = PassingSuite(seed=0, workers=4)
    assert suite.run_parallel(lambda v: v * v, list(range(10))) == [v * v for v in range(10)]
    assert suite.run_parallel(lambda v: v, []) == []


def test_child_seeds_follow_suite_seed():
    a, b = PassingSuite(seed=5), PassingSuite(seed=5)
    assert [a.child_seed() for _ in range(3)] == [b.child_seed() for _ in range(3)]


def test_orchestrator_reports_progress(fake_suites):
    callback = MagicMock()
    report = SuiteOrchestrator(seed=1, progress_callback=callback).run(["passing"])
    assert report.ok
    statuses = [c.args[0]["status"] for c in callback.call_args_list]
    assert statuses == ["starting", "running", "completed"]
    assert callback.call_args_list[-1].args[0]["progress"] == 1.0


def test_orchestrator_captures_suite_errors(fake_suites):
    callback = MagicMock()
    report = SuiteOrchestrator(progress_callback=callback).run(["all"])
    assert not report.ok
    assert report.suites["exploding"].error == "boom"
    assert report.summary["suites_failed"] == 1
    assert report.summary["passed"] == 1
    assert callback.call_args_list[-1].args[0]["status"] == "error"


def test_orchestrator_rejects_unknown_suite():
    with pytest.raises(ValueError):
        SuiteOrchestrator().run(["nope"])


def test_suite_status_lists_descriptions():
    status = SuiteOrchestrator(seed=0).get_suite_status()
    assert status["total_suites"] == 5
    assert set(status["suites"]) == {"grad", "equivariance", "kernel", "poly", "wl"}


def test_kernel_suite_passes():
    report = KernelSuite(seed=0, instances=4).run()
    assert report.ok, [c.line() for c in report.checks if not c.passed]


def test_wl_suite_passes():
    report = WLSuite(seed=0).run()
    assert report.ok, [c.line() for c in report.checks if not c.passed]


def test_equivariance_suite_passes():
    report = EquivarianceSuite(seed=0, trials=2).run()
    assert report.ok, [c.line() for c in report.checks if not c.passed]


def test_poly_suite_passes():
    report = PolySuite(seed=0, draws=5).run()
    assert report.ok, [c.line() for c in report.checks if not c.passed]


@pytest.mark.slow
def test_grad_suite_passes():
    report = GradSuite(seed=0).run()
    assert report.ok, [c.line() for c in report.checks if not c.passed]


@pytest.mark.slow
def test_full_acceptance_gate():
    report = SuiteOrchestrator(seed=0).run(["all"])
    assert report.ok, [c.line() for c in report.checks if not c.passed]
