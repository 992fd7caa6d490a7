"""
Spectral Core

Orthonormal 2D DCT-II transforms over integer frequency grids and the Sobolev
operator family Σ_s = C⁻¹ diag((1+‖ω‖²)^{-s}) C with its inverse and square
root, plus the H^s inner product and norm they induce.

Frequencies are the integer DCT bin indices (k_x, k_y); no 2π or grid-spacing
rescaling is applied. The DCT (rather than the DFT) implies Neumann boundaries,
which suits non-periodic images.

Created: October 2026
Changes: s=0 short-circuits to the identity so H⁰ and L² results are bit-identical
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple, Union

import numpy as np
import scipy.fft

from data_models import Field2D, Spectrum2D, frequency_index
from errors import ShapeMismatchError, ValidationError


logger = logging.getLogger(__name__)

DCT_METHODS = ("fft", "matrix")

FieldLike = Union[Field2D, np.ndarray]


def as_field(f: FieldLike) -> Field2D:
    """Coerce an array to a validated Field2D."""
    return f if isinstance(f, Field2D) else Field2D(f)


@lru_cache(maxsize=64)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix C with C[k, x] = a_k cos(π(2x+1)k / 2n)."""
    if n < 1:
        raise ValidationError(f"DCT size must be positive, got {n}")
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    matrix = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * x + 1) * k / (2 * n))
    matrix[0, :] /= np.sqrt(2.0)
    matrix.setflags(write=False)
    return matrix


def dct2(values: np.ndarray, method: str = "fft") -> np.ndarray:
    """Orthonormal DCT-II over the last two axes of a (..., H, W) stack."""
    if method == "fft":
        return scipy.fft.dctn(values, type=2, norm="ortho", axes=(-2, -1))
    if method == "matrix":
        height, width = values.shape[-2:]
        return dct_matrix(height) @ values @ dct_matrix(width).T
    raise ValidationError(f"Unknown DCT method '{method}', expected one of {DCT_METHODS}")


def idct2(coefficients: np.ndarray, method: str = "fft") -> np.ndarray:
    """Inverse of dct2 over the last two axes."""
    if method == "fft":
        return scipy.fft.idctn(coefficients, type=2, norm="ortho", axes=(-2, -1))
    if method == "matrix":
        height, width = coefficients.shape[-2:]
        return dct_matrix(height).T @ coefficients @ dct_matrix(width)
    raise ValidationError(f"Unknown DCT method '{method}', expected one of {DCT_METHODS}")


def frequency_norm_sq(height: int, width: int) -> np.ndarray:
    """‖ω‖² = k_x² + k_y² per bin."""
    index = frequency_index(height, width).astype(np.float64)
    return index[0] ** 2 + index[1] ** 2


def dct2_forward(f: FieldLike, method: str = "fft") -> Spectrum2D:
    """Orthonormal DCT-II of a field; Parseval holds exactly up to rounding."""
    field = as_field(f)
    return Spectrum2D(dct2(field.values, method))


def dct2_inverse(spectrum: Spectrum2D, method: str = "fft") -> Field2D:
    """Inverse orthonormal DCT-II."""
    expected = (2,) + spectrum.coefficients.shape
    if spectrum.freq_index.shape != expected:
        raise ShapeMismatchError(expected, spectrum.freq_index.shape, "freq_index")
    return Field2D(idct2(spectrum.coefficients, method))


@dataclass(frozen=True, eq=False)
class SobolevOperator:
    """Diagonal-in-DCT operator Σ_s with cached weight tables.

    weights = (1+‖ω‖²)^{-s}, inv_weights = (1+‖ω‖²)^{s},
    sqrt_weights = (1+‖ω‖²)^{-s/2}. Immutable and safe to share across threads.
    """
    order_s: float
    weights: np.ndarray
    inv_weights: np.ndarray
    sqrt_weights: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.weights.shape

    @property
    def is_identity(self) -> bool:
        return self.order_s == 0.0

    def table(self, power: float) -> np.ndarray:
        """D_s^{power}; the three cached tables are returned for power 1, -1, 1/2."""
        if power == 1.0:
            return self.weights
        if power == -1.0:
            return self.inv_weights
        if power == 0.5:
            return self.sqrt_weights
        base = 1.0 + frequency_norm_sq(*self.shape)
        return base ** (-self.order_s * power)

    def check_shape(self, shape: Tuple[int, ...], what: str = "field") -> None:
        if tuple(shape[-2:]) != self.shape:
            raise ShapeMismatchError(self.shape, shape[-2:], what)

    def filter(self, values: np.ndarray, power: float = 1.0) -> np.ndarray:
        """Apply Σ_s^{power} to a (..., H, W) stack."""
        self.check_shape(values.shape)
        if self.is_identity or power == 0.0:
            return np.array(values, dtype=np.float64)
        return idct2(self.table(power) * dct2(values))

    def norm_sq_batch(self, values: np.ndarray) -> np.ndarray:
        """‖·‖²_{H^s} over the last two axes of a stack."""
        self.check_shape(values.shape)
        if self.is_identity:
            return np.sum(values * values, axis=(-2, -1))
        coeffs = dct2(values)
        return np.sum(self.inv_weights * coeffs * coeffs, axis=(-2, -1))

    def inner_batch(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """⟨a, b⟩_{H^s} over the last two axes of two stacks."""
        self.check_shape(a.shape)
        self.check_shape(b.shape)
        if self.is_identity:
            return np.sum(a * b, axis=(-2, -1))
        return np.sum(self.inv_weights * dct2(a) * dct2(b), axis=(-2, -1))


def make_sobolev(s: float, h: int, w: int) -> SobolevOperator:
    """Build Σ_s on an h×w grid with weights (1 + k_x² + k_y²)^{-s}."""
    s = float(s)
    if not np.isfinite(s) or s < 0:
        raise ValidationError(f"Sobolev order must be a finite value >= 0, got {s}")
    if h < 1 or w < 1:
        raise ValidationError(f"Grid must be positive, got {h}x{w}")

    base = 1.0 + frequency_norm_sq(h, w)
    weights = base ** (-s)
    inv_weights = base ** s
    sqrt_weights = base ** (-s / 2.0)
    for table in (weights, inv_weights, sqrt_weights):
        table.setflags(write=False)

    logger.debug(f"Sobolev operator s={s} on {h}x{w}, min weight {weights.min():.3e}")
    return SobolevOperator(order_s=s, weights=weights, inv_weights=inv_weights, sqrt_weights=sqrt_weights)


def apply_sigma_power(op: SobolevOperator, f: FieldLike, power: float) -> Field2D:
    """Σ_s^{power} f."""
    field = as_field(f)
    op.check_shape(field.shape)
    return Field2D(op.filter(field.values, power))


def apply_sigma(op: SobolevOperator, f: FieldLike) -> Field2D:
    """Σ_s f, a linear self-adjoint low-pass filter."""
    return apply_sigma_power(op, f, 1.0)


def apply_sigma_inv(op: SobolevOperator, f: FieldLike) -> Field2D:
    """Σ_s⁻¹ f, the precision operator inducing the H^s metric."""
    return apply_sigma_power(op, f, -1.0)


def apply_sigma_sqrt(op: SobolevOperator, f: FieldLike) -> Field2D:
    """Σ_s^{1/2} f, the coloring filter for white noise."""
    return apply_sigma_power(op, f, 0.5)


def sobolev_gradient(op: SobolevOperator, grad: FieldLike) -> Field2D:
    """Riesz representer Σ_s ∇J of an L² gradient in H^s."""
    return apply_sigma(op, grad)


def sobolev_inner(op: SobolevOperator, f: FieldLike, g: FieldLike) -> float:
    """⟨f, g⟩_{H^s} = Σ_ω (1+‖ω‖²)^s f̂(ω) ĝ(ω)."""
    f, g = as_field(f), as_field(g)
    op.check_shape(f.shape)
    g.require_shape(f.shape)
    return float(op.inner_batch(f.values, g.values))


def sobolev_norm_sq(op: SobolevOperator, f: FieldLike) -> float:
    """‖f‖²_{H^s}; never below ‖f‖²_{L²} for s >= 0."""
    field = as_field(f)
    return float(op.norm_sq_batch(field.values))
