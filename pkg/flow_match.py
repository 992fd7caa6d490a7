"""
Flow Matching Paths

Linear noise-to-data interpolation, the marginal and conditional target
velocities, the CFM loss, uniform-grid Euler integration and re-projection of
an extrapolated endpoint onto the shared-noise path.

Created: October 2026
Changes: Time sampling helper shares the Philox stream of colored_noise
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from colored_noise import NoiseSampler
from data_models import Field2D
from errors import DivergenceError, SingularityError, ValidationError


logger = logging.getLogger(__name__)

DEFAULT_T_MAX = 0.99
DEFAULT_HORIZON = 0.99
DEFAULT_EULER_STEPS = 28

# v(x_t, t, c) -> velocity
VelocityFn = Callable[[Field2D, float, Field2D], Field2D]


def _check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"t must lie in [0, 1], got {t}")
    return t


@dataclass(frozen=True)
class TrajectoryConfig:
    """Euler integration and time-sampling settings."""
    steps: int = DEFAULT_EULER_STEPS
    t_max: float = DEFAULT_T_MAX
    horizon: float = DEFAULT_HORIZON

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError(f"steps must be positive, got {self.steps}")
        if not 0.0 < self.t_max <= 1.0:
            raise ValidationError(f"t_max must lie in (0, 1], got {self.t_max}")
        if not 0.0 < self.horizon <= 1.0:
            raise ValidationError(f"horizon must lie in (0, 1], got {self.horizon}")


@dataclass(frozen=True)
class FlowSample:
    """One interpolation point tied to its noise realization and condition."""
    x0: Field2D
    x1: Field2D
    cond: Field2D
    t: float
    xt: Field2D

    @classmethod
    def build(cls, x0: Field2D, x1: Field2D, cond: Field2D, t: float) -> "FlowSample":
        return cls(x0=x0, x1=x1, cond=cond, t=float(t), xt=interpolate(x0, x1, t))


def interpolate(x0: Field2D, x1: Field2D, t: float) -> Field2D:
    """x_t = (1−t)·x₀ + t·x₁."""
    t = _check_time(t)
    x1.require_shape(x0.shape)
    return Field2D((1.0 - t) * x0.values + t * x1.values)


def target_velocity_marginal(x0: Field2D, x1: Field2D) -> Field2D:
    """u = x₁ − x₀, constant along the path."""
    return x1 - x0


def target_velocity_conditional(xt: Field2D, x1: Field2D, t: float, t_max: float = DEFAULT_T_MAX) -> Field2D:
    """u_t(x|x₁) = (x₁ − x_t)/(1−t); raises SingularityError for t ≥ t_max."""
    t = _check_time(t)
    if t >= t_max:
        raise SingularityError(t, t_max)
    x1.require_shape(xt.shape)
    return Field2D((x1.values - xt.values) / (1.0 - t))


def cfm_loss(v_pred: Field2D, x0: Field2D, x1: Field2D) -> float:
    """Mean over cells of (v − (x₁ − x₀))²."""
    v_pred.require_shape(x0.shape)
    x1.require_shape(x0.shape)
    diff = v_pred.values - (x1.values - x0.values)
    return float(np.mean(diff * diff))


def euler_integrate(field: VelocityFn, x0: Field2D, cond: Field2D, cfg: TrajectoryConfig) -> Field2D:
    """x_{k+1} = x_k + v(x_k, k/N, c)/N for k < N; returns the state at t=1."""
    dt = 1.0 / cfg.steps
    state = x0.values
    for k in range(cfg.steps):
        velocity = field(Field2D(state), k * dt, cond)
        state = state + velocity.values * dt
        if not np.all(np.isfinite(state)):
            logger.error(f"Euler integration diverged at step {k}")
            raise DivergenceError(k, "Euler state")
    return Field2D(state)


def reproject(x0: Field2D, x1_hat: Field2D, t: float) -> Field2D:
    """Place an endpoint estimate back on the path of the shared noise x₀."""
    return interpolate(x0, x1_hat, t)


def sample_times(sampler: NoiseSampler, count: int, horizon: float = DEFAULT_HORIZON,
                 stratified: bool = False) -> np.ndarray:
    """t ~ U[0, T), one per triplet; stratified places one draw in each of `count` strata."""
    if not 0.0 < horizon <= 1.0:
        raise ValidationError(f"horizon must lie in (0, 1], got {horizon}")
    u = 1.0 - sampler.uniform(count)
    if stratified:
        u = (np.arange(count) + u) / count
    return horizon * u
