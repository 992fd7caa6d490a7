"""
Sobolev Alignment Toolkit - Data Models

Shared data structures for the spectral, training and diagnostics modules:
spatial fields, their DCT spectra, spectral-density estimates, energy gaps and
run reports.

Created: October 2026
Changes: Field2D arithmetic helpers; RunReport excludes wall time from equality
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from errors import ShapeMismatchError, ValidationError


Number = Union[int, float]


def _as_finite_grid(values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"{what} must be two-dimensional, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"{what} must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contains NaN or Inf values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Field2D:
    """A real H×W grid in the spatial domain (image, velocity, residual, perturbation)."""
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_finite_grid(self.values, "Field2D"))

    @classmethod
    def zeros(cls, height: int, width: int) -> "Field2D":
        return cls(np.zeros((height, width)))

    @classmethod
    def full(cls, height: int, width: int, value: float) -> "Field2D":
        return cls(np.full((height, width), float(value)))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def require_shape(self, shape: Tuple[int, int], what: str = "field") -> None:
        """Raise ShapeMismatchError unless this field has the given shape."""
        if self.values.shape != tuple(shape):
            raise ShapeMismatchError(shape, self.values.shape, what)

    def inner(self, other: "Field2D") -> float:
        """Plain L² inner product (sum over cells)."""
        other.require_shape(self.shape)
        return float(np.sum(self.values * other.values))

    def energy(self) -> float:
        """Squared L² norm."""
        return float(np.sum(self.values * self.values))

    def _binary(self, other: "Field2D", op) -> "Field2D":
        if not isinstance(other, Field2D):
            return NotImplemented
        other.require_shape(self.shape)
        return Field2D(op(self.values, other.values))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar: Number):
        if isinstance(scalar, Field2D):
            return NotImplemented
        return Field2D(self.values * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar: Number):
        return Field2D(self.values / float(scalar))

    def __neg__(self):
        return Field2D(-self.values)


def frequency_index(height: int, width: int) -> np.ndarray:
    """Integer DCT bin indices, shape (2, H, W): [k_x, k_y] per bin."""
    kx, ky = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return np.stack([kx, ky]).astype(np.int64)


@dataclass(frozen=True, eq=False)
class Spectrum2D:
    """DCT-II coefficients of a Field2D together with their frequency indices."""
    coefficients: np.ndarray
    freq_index: Optional[np.ndarray] = None

    def __post_init__(self):
        coeffs = _as_finite_grid(self.coefficients, "Spectrum2D")
        object.__setattr__(self, "coefficients", coeffs)
        if self.freq_index is None:
            index = frequency_index(*coeffs.shape)
        else:
            index = np.asarray(self.freq_index, dtype=np.int64)
            if index.shape != (2,) + coeffs.shape:
                raise ShapeMismatchError((2,) + coeffs.shape, index.shape, "freq_index")
        index.setflags(write=False)
        object.__setattr__(self, "freq_index", index)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.coefficients.shape

    @property
    def radius(self) -> np.ndarray:
        """‖ω‖ per bin."""
        return np.sqrt(np.sum(self.freq_index.astype(np.float64) ** 2, axis=0))


@dataclass(frozen=True)
class PsdEstimate:
    """Radially averaged power spectral density of an ensemble."""
    radial_bins: Tuple[Tuple[float, float], ...]
    sample_count: int

    def __post_init__(self):
        radii = [r for r, _ in self.radial_bins]
        if any(p < 0 for _, p in self.radial_bins):
            raise ValidationError("PSD powers must be nonnegative")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValidationError("PSD bins must be ordered by increasing radius")

    @property
    def radii(self) -> np.ndarray:
        return np.array([r for r, _ in self.radial_bins])

    @property
    def powers(self) -> np.ndarray:
        return np.array([p for _, p in self.radial_bins])


@dataclass(frozen=True)
class EnergyGap:
    """Policy-minus-reference residual energy in a Sobolev norm."""
    value: float
    policy_energy: float
    reference_energy: float

    @classmethod
    def from_energies(cls, policy_energy: float, reference_energy: float) -> "EnergyGap":
        return cls(
            value=policy_energy - reference_energy,
            policy_energy=policy_energy,
            reference_energy=reference_energy,
        )


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of a central finite-difference gradient check."""
    max_relative_error: float
    probe_count: int
    epsilon: float
    target: str = "params"

    def __post_init__(self):
        if self.probe_count < 1:
            raise ValidationError("probe_count must be at least 1")

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_relative_error < tolerance


@dataclass(frozen=True)
class ProfileRow:
    """One radial bin of a residual spectral-energy profile."""
    radius_bin: int
    l2_energy: float
    weighted_energy: float


@dataclass(frozen=True)
class SweepRow:
    """One Sobolev-order row of an s-sweep table."""
    s: float
    psnr: float
    lsd: float
    slope_error: float


@dataclass(frozen=True)
class CapacityRow:
    """One adversary width of a capacity sweep."""
    width: int
    final_energy: float
    cosine: float


@dataclass(frozen=True)
class EvalRow:
    """Reconstruction metrics for one held-out pair."""
    index: int
    psnr: float
    lsd: float


@dataclass(frozen=True)
class AblationRow:
    """One (seed, variant) cell of the ablation grid."""
    seed: int
    variant: str
    psnr: float
    lsd: float
    slope_error: float
    final_loss: float


@dataclass
class RunReport:
    """Loss curve, final metrics and config echo of one experiment run."""
    variant: str
    config_echo: str
    loss_curve: List[Tuple[int, float]] = field(default_factory=list)
    metrics: Dict[str, float] = field(default_factory=dict)
    wall_time: float = field(default=0.0, compare=False)

    def record(self, step: int, value: float) -> None:
        if self.loss_curve and step <= self.loss_curve[-1][0]:
            raise ValidationError(f"loss curve steps must increase, got {step} after {self.loss_curve[-1][0]}")
        self.loss_curve.append((step, float(value)))

    @property
    def initial_loss(self) -> float:
        return self.loss_curve[0][1] if self.loss_curve else float("nan")

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1][1] if self.loss_curve else float("nan")
