"""
Verification Data Models

Check outcomes, suite reports and the options shared by every suite.

Created: October 2026
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one numeric check against its threshold."""
    name: str
    passed: bool
    value: float
    threshold: float
    comparison: str = "<"

    @classmethod
    def below(cls, name: str, value: float, threshold: float) -> "CheckResult":
        return cls(name=name, passed=bool(value < threshold), value=float(value), threshold=threshold)

    @classmethod
    def above(cls, name: str, value: float, threshold: float) -> "CheckResult":
        return cls(name=name, passed=bool(value > threshold), value=float(value), threshold=threshold,
                   comparison=">")

    @classmethod
    def flag(cls, name: str, ok: bool) -> "CheckResult":
        return cls(name=name, passed=bool(ok), value=float(ok), threshold=1.0, comparison="==")

    def describe(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.value:.6g} (required {self.comparison} {self.threshold:g})"


@dataclass
class SuiteReport:
    """All checks of one suite plus its one-line summary."""
    suite: str
    checks: List[CheckResult] = field(default_factory=list)
    headline: str = ""
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    @property
    def failures(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]


@dataclass(frozen=True)
class SuiteOptions:
    """Knobs of the verification suites; defaults are the acceptance settings."""
    seed: int = 42
    s: Optional[float] = None
    eps: float = 0.1
    widths: Tuple[int, ...] = (2, 8, 32, 128)
    steps: int = 2000
    tasks: int = 20
    grid: Tuple[int, int] = (8, 8)
    samples: int = 100_000
