"""
Verification Suite Manager

Registers the numerical verification suites and runs them by name, logging
every check.

Created: October 2026
Changes: Failed checks logged at error level
"""

import logging
import time
from typing import Dict, List

from errors import ValidationError, VerificationError
from verification.data_models import SuiteOptions, SuiteReport
from verification.prop1_suite import Prop1Suite
from verification.prop2_suite import Prop2Suite
from verification.spectral_suite import SpectralSuite


class VerificationManager:
    """Runs the spectral, prop1 and prop2 suites."""

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        self.suites: Dict[str, object] = {}
        for suite in (SpectralSuite(), Prop1Suite(), Prop2Suite()):
            self.register(suite)

    def register(self, suite) -> None:
        self.suites[suite.name] = suite

    def names(self) -> List[str]:
        return sorted(self.suites)

    def run(self, name: str, options: SuiteOptions = SuiteOptions()) -> SuiteReport:
        """
        Run one suite and log each check.

        Raises:
            ValidationError: If no suite has that name
        """
        if name not in self.suites:
            raise ValidationError(f"Unknown verification suite '{name}', expected one of {self.names()}")

        self.logger.info(f"Running verification suite: {name}")
        started = time.perf_counter()
        report = self.suites[name].run(options)
        report.elapsed = time.perf_counter() - started

        for check in report.checks:
            log = self.logger.info if check.passed else self.logger.error
            log(check.describe())
        self.logger.info(f"Suite {name}: {len(report.checks) - len(report.failures)}/{len(report.checks)} "
                         f"checks passed in {report.elapsed:.2f} seconds")
        return report

    @staticmethod
    def require_passed(report: SuiteReport) -> None:
        """Raise VerificationError listing the failed checks, if any."""
        if not report.passed:
            failed = ", ".join(c.name for c in report.failures) or "no checks ran"
            raise VerificationError(f"Suite {report.suite} failed: {failed}")
