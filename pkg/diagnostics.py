"""
Spectral and Distortion Diagnostics

Log-spectral distance, PSNR, PSD slope error and per-radius residual energy
profiles.

LSD is the dB-RMS difference of squared DCT coefficients over every bin except
DC, with powers floored at 1e-12 before the logarithm.

Created: October 2026
"""

import logging
from typing import Iterable, List

import numpy as np

from colored_noise import estimate_psd, fit_psd_slope, radial_bin_index
from data_models import Field2D, ProfileRow
from spectral_core import SobolevOperator, dct2


logger = logging.getLogger(__name__)

POWER_FLOOR = 1e-12
PSNR_IDENTICAL = float("inf")


def log_spectral_distance(a: Field2D, b: Field2D) -> float:
    """√(mean over non-DC bins of (10·log₁₀ Pₐ − 10·log₁₀ P_b)²)."""
    b.require_shape(a.shape)
    power_a = np.maximum(dct2(a.values) ** 2, POWER_FLOOR).ravel()[1:]
    power_b = np.maximum(dct2(b.values) ** 2, POWER_FLOOR).ravel()[1:]
    if power_a.size == 0:
        return 0.0
    diff = 10.0 * np.log10(power_a) - 10.0 * np.log10(power_b)
    return float(np.sqrt(np.mean(diff * diff)))


def psnr(a: Field2D, b: Field2D, peak: float = 2.0) -> float:
    """10·log₁₀(peak²/MSE); +inf for identical inputs. Peak 2 spans [−1, 1]."""
    b.require_shape(a.shape)
    mse = float(np.mean((a.values - b.values) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(peak * peak / mse))


def psd_slope_error(fields: Iterable[Field2D], alpha: float) -> float:
    """|fitted PSD slope − (−α)| over an ensemble."""
    return abs(fit_psd_slope(estimate_psd(fields)) + alpha)


def residual_spectrum_profile(gamma: Field2D, op: SobolevOperator) -> List[ProfileRow]:
    """Per radial bin: unweighted and (1+‖ω‖²)^s-weighted spectral energy.

    Every bin up to the largest radius is listed, including empty-energy ones.
    """
    op.check_shape(gamma.shape, "residual")
    power = dct2(gamma.values) ** 2
    weighted = power if op.is_identity else power * op.inv_weights
    _, bins, n_bins = radial_bin_index(*gamma.shape)
    occupied = np.bincount(bins.ravel(), minlength=n_bins) > 0
    l2 = np.bincount(bins.ravel(), power.ravel(), minlength=n_bins)
    hs = np.bincount(bins.ravel(), weighted.ravel(), minlength=n_bins)
    return [
        ProfileRow(radius_bin=int(k), l2_energy=float(l2[k]), weighted_energy=float(hs[k]))
        for k in np.flatnonzero(occupied)
    ]


def profile_to_csv(rows: List[ProfileRow]) -> str:
    lines = ["radius_bin,l2_energy,weighted_energy"]
    lines.extend(f"{r.radius_bin},{r.l2_energy:.17g},{r.weighted_energy:.17g}" for r in rows)
    return "\n".join(lines) + "\n"
