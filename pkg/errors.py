"""
Error Types for the Sobolev Alignment Toolkit

Every failure the library raises derives from SobolevError. Validation
problems also derive from ValueError so callers that only know the builtin
hierarchy keep working.

Created: October 2026
Changes: Initial error hierarchy; exit-code mapping lives in main.py
"""

from pathlib import Path
from typing import Optional


class SobolevError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(SobolevError, ValueError):
    """Invalid input: bad shape, non-finite value or out-of-range parameter."""


class ShapeMismatchError(ValidationError):
    """Two grids that must agree in shape do not."""

    def __init__(self, expected, actual, what: str = "field"):
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f"{what} shape mismatch: expected {self.expected}, got {self.actual}")


class SingularityError(ValidationError):
    """Time too close to 1 for the conditional target field."""

    def __init__(self, t: float, t_max: float):
        self.t = t
        self.t_max = t_max
        super().__init__(f"t={t} is at or beyond t_max={t_max}; 1/(1-t) is unbounded")


class StaleCacheError(ValidationError):
    """A backward pass was requested with activations from other parameters."""


class DegenerateGradientError(ValidationError):
    """The gradient is identically zero, so no descent direction exists."""


class ConfigError(ValidationError):
    """A key=value configuration file is malformed or violates an invariant."""

    def __init__(self, message: str, path: Optional[Path] = None, key: Optional[str] = None):
        self.path = path
        self.key = key
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message}")


class DivergenceError(SobolevError, RuntimeError):
    """A loss or state became non-finite during an iterative procedure."""

    def __init__(self, step: int, what: str = "loss"):
        self.step = step
        super().__init__(f"{what} became non-finite at step {step}")


class ArchiveError(SobolevError, OSError):
    """Reading or writing an on-disk record failed."""

    def __init__(self, message: str, path: Path):
        self.path = Path(path)
        super().__init__(f"{message}: {self.path}")


class VerificationError(SobolevError):
    """An oracle suite reported at least one failed check."""
