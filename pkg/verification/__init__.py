"""
Verification Package

Numerical verification suites for the spectral operators and the worst-case
adversary:

- spectral: Parseval, operator algebra and noise coloring
- prop1: closed-form worst-case perturbation against a brute-force oracle
- prop2: learned adversaries against the closed form, across widths

Created: October 2026
"""

from .data_models import CheckResult, SuiteOptions, SuiteReport
from .suite_manager import VerificationManager

__all__ = [
    'VerificationManager',
    'CheckResult',
    'SuiteOptions',
    'SuiteReport',
]

__version__ = '1.0.0'
