"""
Spectral Identity Suite

Parseval, fast-vs-matrix DCT agreement, operator algebra and the coloring
statistics of the noise sampler.

Created: October 2026
"""

import logging

import numpy as np

from colored_noise import NoiseSampler, derive_seed, ensemble_psd, spectral_variance
from spectral_core import dct2, make_sobolev
from verification.data_models import CheckResult, SuiteOptions, SuiteReport


SHAPES = ((8, 8), (16, 16), (32, 32), (33, 17))
ALGEBRA_ORDERS = (0.5, 1.5)
COLORING_ORDERS = (0.5, 1.5, 3.0)
COLORING_GRID = (16, 16)
FIELDS_PER_SHAPE = 100
WHITE_SAMPLES = 5000


class SpectralSuite:
    """Spectral identities on random fields of several shapes."""

    name = "spectral"

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def run(self, options: SuiteOptions) -> SuiteReport:
        report = SuiteReport(suite=self.name)
        for index, shape in enumerate(SHAPES):
            sampler = NoiseSampler(derive_seed(options.seed, "probe", index), shape)
            fields = sampler.white_batch(FIELDS_PER_SHAPE)
            report.checks.extend(self._transform_checks(shape, fields))
            report.checks.extend(self._operator_checks(shape, fields))
        report.checks.extend(self._coloring_checks(options))

        worst = max(c.value for c in report.checks if c.name.startswith("parseval"))
        report.headline = f"spectral: parseval={worst:.3e}"
        return report

    def _transform_checks(self, shape, fields: np.ndarray):
        label = f"{shape[0]}x{shape[1]}"
        coeffs = dct2(fields)
        energy = np.sum(fields * fields, axis=(-2, -1))
        parseval = np.max(np.abs(np.sum(coeffs * coeffs, axis=(-2, -1)) - energy) / energy)
        methods = np.max(np.abs(coeffs - dct2(fields, method="matrix")))
        return [
            CheckResult.below(f"parseval {label}", parseval, 1e-10),
            CheckResult.below(f"dct fft vs matrix {label}", methods, 1e-9),
        ]

    def _operator_checks(self, shape, fields: np.ndarray):
        label = f"{shape[0]}x{shape[1]}"
        checks = []
        for s in ALGEBRA_ORDERS:
            op = make_sobolev(s, *shape)
            scale = np.max(np.abs(fields))
            roundtrip = np.max(np.abs(op.filter(op.filter(fields, -1.0), 1.0) - fields)) / scale
            norm = op.norm_sq_batch(fields)
            spatial = np.sum(fields * op.filter(fields, -1.0), axis=(-2, -1))
            checks.append(CheckResult.below(f"sigma∘sigma⁻¹ {label} s={s:g}", roundtrip, 1e-9))
            checks.append(CheckResult.below(f"H^s norm vs precision {label} s={s:g}",
                                            np.max(np.abs(norm - spatial) / norm), 1e-9))
        return checks

    def _coloring_checks(self, options: SuiteOptions):
        checks = []
        for index, s in enumerate(COLORING_ORDERS):
            op = make_sobolev(s, *COLORING_GRID)
            sampler = NoiseSampler(derive_seed(options.seed, "noise", index), COLORING_GRID, op)
            variance = spectral_variance(sampler, options.samples, colored=True)
            error = np.max(np.abs(variance / op.weights - 1.0))
            self.logger.debug(f"Colored variance s={s:g}: worst relative error {error:.4f}")
            checks.append(CheckResult.below(f"colored variance s={s:g}", error, 0.05))

        white = ensemble_psd(NoiseSampler(derive_seed(options.seed, "noise", len(COLORING_ORDERS)), COLORING_GRID),
                             WHITE_SAMPLES, colored=False)
        powers = white.powers
        checks.append(CheckResult.below("white PSD flatness", np.max(powers) / np.min(powers), 1.5))
        return checks
