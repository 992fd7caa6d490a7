"""
Worst-Case Perturbation Suite

Compares the closed-form worst-case perturbation δ* against a brute-force
projected-gradient minimiser on random quadratic energies, and checks that
δ* sits on the trust-region boundary.

Created: October 2026
"""

import logging

import numpy as np

from adversary import (
    QuadraticEnergy, first_order_descent_check, hs_cosine, make_quadratic_task, optimal_delta,
    projected_gradient_oracle,
)
from colored_noise import NoiseSampler, derive_seed
from spectral_core import make_sobolev, sobolev_norm_sq
from verification.data_models import CheckResult, SuiteOptions, SuiteReport


DEFAULT_ORDERS = (0.0, 1.5)
ORACLE_ITERATIONS = 200
COSINE_THRESHOLD = 0.999


def random_curvature(seed: int, index: int, cells: int) -> np.ndarray:
    """Symmetric positive-definite I + QQᵀ/cells."""
    q = NoiseSampler(derive_seed(seed, "probe", index + 1), (cells, cells)).white_batch(1)[0]
    curvature = np.eye(cells) + q @ q.T / cells
    return 0.5 * (curvature + curvature.T)


class Prop1Suite:
    """Closed-form δ* against the projected-gradient oracle."""

    name = "prop1"

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def run(self, options: SuiteOptions) -> SuiteReport:
        orders = (options.s,) if options.s is not None else DEFAULT_ORDERS
        report = SuiteReport(suite=self.name)
        worst_cosine = 1.0

        for s in orders:
            op = make_sobolev(s, *options.grid)
            cells = options.grid[0] * options.grid[1]
            states, quadratic = make_quadratic_task(op, options.tasks, options.seed)
            cosines, norm_errors, l2_errors, descents = [], [], [], []

            for i in range(options.tasks):
                energy = QuadraticEnergy(quadratic.center[i], random_curvature(options.seed, i, cells))
                x = states.xt[i]
                _, grad = energy.value_and_grad(x)
                delta = optimal_delta(op, grad, options.eps)
                oracle = projected_gradient_oracle(energy, op, x, options.eps, ORACLE_ITERATIONS)

                cosines.append(hs_cosine(op, delta, oracle))
                norm_errors.append(abs(np.sqrt(sobolev_norm_sq(op, delta)) - options.eps))
                descents.append(first_order_descent_check(energy, x, op, options.eps, seed=options.seed + i).passed())
                if op.is_identity:
                    normalized = -options.eps * grad.values / np.sqrt(grad.energy())
                    l2_errors.append(float(np.max(np.abs(delta.values - normalized))))

            self.logger.info(f"s={s:g}: min cosine {min(cosines):.9f} over {options.tasks} energies")
            worst_cosine = min(worst_cosine, min(cosines))
            report.checks.append(CheckResult.above(f"cosine to oracle s={s:g}", min(cosines), COSINE_THRESHOLD))
            report.checks.append(CheckResult.below(f"boundary norm s={s:g}", max(norm_errors), 1e-9))
            report.checks.append(CheckResult.flag(f"beats random directions s={s:g}", all(descents)))
            if l2_errors:
                report.checks.append(CheckResult.below("normalized gradient at s=0", max(l2_errors), 1e-9))

        report.headline = f"prop1: cosine={worst_cosine:.9f}"
        return report
