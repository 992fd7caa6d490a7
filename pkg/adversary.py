"""
Sobolev Adversary

Worst-case perturbations of the Euclidean residual energy under an H^s trust
region, coupled adversarial sampling, and the parametric adversary trained to
reproduce the worst-case direction.

Closed form on the ball ‖δ‖_{H^s} ≤ ε:
    δ* = −ε Σ_s∇J / √⟨∇J, Σ_s∇J⟩

The learned adversary emits a raw field r; its perturbation is
δ = P_ε(Σ_s^{1/2} r), where P_ε rescales onto the ball in the DCT domain.
Coloring the output makes ‖Σ_s^{1/2} r‖_{H^s} = ‖r‖₂, so the trust region is
isotropic in the network's output space.

Created: October 2026
Changes: Training loop shared by dataset-driven training and the fixed-energy checks
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from colored_noise import NoiseSampler, derive_seed
from config import AdversaryTrainingConfig
from data_models import CapacityRow, Field2D
from errors import DegenerateGradientError, DivergenceError, SingularityError, ValidationError
from flow_match import DEFAULT_HORIZON, DEFAULT_T_MAX, VelocityFn, reproject, sample_times
from param_field import AdamState, FieldParams, ParametricField, VelocityMLP, adam_step, sgd_step
from spectral_core import SobolevOperator, as_field, sobolev_inner, sobolev_norm_sq


logger = logging.getLogger(__name__)

TRUST_SCHEDULES = ("constant", "linear")


@dataclass(frozen=True)
class TrustRegion:
    """Sobolev budget ε_t: constant ε, or ε·(1−t) under the linear schedule."""
    epsilon: float = 0.1
    schedule: str = "constant"

    def __post_init__(self):
        if not np.isfinite(self.epsilon) or self.epsilon <= 0:
            raise ValidationError(f"Trust-region epsilon must be positive, got {self.epsilon}")
        if self.schedule not in TRUST_SCHEDULES:
            raise ValidationError(f"Unknown trust schedule '{self.schedule}', expected one of {TRUST_SCHEDULES}")

    def epsilon_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if self.schedule == "constant":
            return np.full(t.shape, self.epsilon)
        if np.any(t >= 1.0):
            raise ValidationError("The linear trust schedule needs t < 1")
        return self.epsilon * (1.0 - t)


@dataclass(frozen=True)
class StateBatch:
    """(B, H, W) states with their conditions, times and optional endpoints."""
    xt: np.ndarray
    cond: np.ndarray
    t: np.ndarray
    x1: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.xt.shape[0]


def hs_cosine(op: SobolevOperator, a, b) -> float:
    """Cosine similarity in the H^s inner product."""
    a, b = as_field(a), as_field(b)
    denom = np.sqrt(sobolev_norm_sq(op, a) * sobolev_norm_sq(op, b))
    if denom == 0.0:
        raise DegenerateGradientError("Cosine similarity with a zero field is undefined")
    return sobolev_inner(op, a, b) / denom


def optimal_delta(op: SobolevOperator, grad, eps: float) -> Field2D:
    """Closed-form minimiser of the linearised energy on the H^s ball of radius eps."""
    grad = as_field(grad)
    op.check_shape(grad.shape, "gradient")
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    preconditioned = op.filter(grad.values, 1.0)
    denom = float(np.sum(grad.values * preconditioned))
    if not np.any(grad.values) or denom <= 0.0:
        raise DegenerateGradientError("Energy gradient vanishes; no worst-case direction exists")
    return Field2D(-eps * preconditioned / np.sqrt(denom))


def project_batch(op: SobolevOperator, values: np.ndarray, eps: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Rescale each field of a stack onto its H^s ball; returns (projected, H^s norms)."""
    norms = np.sqrt(op.norm_sq_batch(values))
    scale = np.divide(eps, norms, out=np.ones_like(norms), where=norms > eps)
    return values * scale[:, None, None], norms


def projection_vjp(op: SobolevOperator, values: np.ndarray, norms: np.ndarray, eps: np.ndarray,
                   upstream: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of project_batch.

    Inside the ball the projection is the identity; outside, with n = ‖a‖_{H^s},
    the VJP is ε/n·(g − Σ⁻¹a·⟨a, g⟩/n²).
    """
    outside = norms > eps
    result = np.array(upstream, dtype=np.float64)
    if np.any(outside):
        a = values[outside]
        g = upstream[outside]
        n = norms[outside][:, None, None]
        e = eps[outside][:, None, None]
        along = np.sum(a * g, axis=(-2, -1))[:, None, None]
        result[outside] = e / n * (g - op.filter(a, -1.0) * along / (n * n))
    return result


def project_to_ball(op: SobolevOperator, f, eps: float) -> Field2D:
    """Nearest-in-direction point of the H^s ball: f unchanged inside, rescaled outside."""
    field_ = as_field(f)
    op.check_shape(field_.shape)
    projected, _ = project_batch(op, field_.values[None], np.array([float(eps)]))
    return Field2D(projected[0])


class QuadraticEnergy:
    """J(x) = (x − x̄)ᵀ A (x − x̄); A defaults to the identity.

    center may be one (H, W) field or a (B, H, W) stack matched item by item.
    """

    def __init__(self, center: np.ndarray, curvature: Optional[np.ndarray] = None):
        self.center = np.array(center, dtype=np.float64)
        cells = self.center.shape[-2] * self.center.shape[-1]
        if curvature is not None:
            curvature = np.array(curvature, dtype=np.float64)
            if curvature.shape != (cells, cells):
                raise ValidationError(f"Curvature must be {cells}x{cells}, got {curvature.shape}")
            if not np.allclose(curvature, curvature.T):
                raise ValidationError("Curvature must be symmetric")
        self.curvature = curvature

    def _apply(self, diff: np.ndarray) -> np.ndarray:
        if self.curvature is None:
            return diff
        flat = diff.reshape(diff.shape[0], -1)
        return (flat @ self.curvature).reshape(diff.shape)

    def value_and_grad_batch(self, states: np.ndarray, context: Optional[StateBatch] = None):
        diff = states - self.center
        curved = self._apply(diff)
        return np.sum(diff * curved, axis=(-2, -1)), 2.0 * curved

    def value_and_grad(self, x, context: Optional[StateBatch] = None) -> Tuple[float, Field2D]:
        values, grads = self.value_and_grad_batch(as_field(x).values[None], context)
        return float(values[0]), Field2D(grads[0])


class ResidualEnergy:
    """J(x) = ‖v(x, t, c) − (x₁ − x)/(1−t)‖²₂ for a frozen velocity network.

    ∇J = 2(∂v/∂x)ᵀγ + 2γ/(1−t).
    """

    def __init__(self, policy: ParametricField, t_max: float = DEFAULT_T_MAX):
        self.policy = policy
        self.t_max = t_max

    def value_and_grad_batch(self, states: np.ndarray, context: StateBatch):
        if context.x1 is None:
            raise ValidationError("Residual energy needs endpoints x1")
        if np.any(context.t >= self.t_max):
            raise SingularityError(float(np.max(context.t)), self.t_max)
        gap = (1.0 - context.t)[:, None, None]
        velocity, cache = self.policy.forward_batch(states, context.cond, context.t)
        gamma = velocity - (context.x1 - states) / gap
        _, d_states = self.policy.backward_batch(cache, 2.0 * gamma)
        return np.sum(gamma * gamma, axis=(-2, -1)), d_states + 2.0 * gamma / gap

    def value_and_grad(self, x, context: StateBatch) -> Tuple[float, Field2D]:
        values, grads = self.value_and_grad_batch(as_field(x).values[None], context)
        return float(values[0]), Field2D(grads[0])


def residual_energy(policy: ParametricField, xt: Field2D, cond: Field2D, t: float, x1: Field2D,
                    t_max: float = DEFAULT_T_MAX) -> Tuple[float, Field2D]:
    """Euclidean residual energy of the policy at x_t and its gradient w.r.t. x_t."""
    context = StateBatch(xt=xt.values[None], cond=cond.values[None], t=np.array([float(t)]), x1=x1.values[None])
    return ResidualEnergy(policy, t_max).value_and_grad(xt, context)


def projected_gradient_oracle(energy, op: SobolevOperator, x, eps: float, iterations: int = 200,
                              context: Optional[StateBatch] = None) -> Field2D:
    """Brute-force minimiser of J(x + δ) over ‖δ‖_{H^s} ≤ eps.

    Steps along the preconditioned gradient Σ_s∇J and rescales back onto the ball.
    """
    x = as_field(x)
    delta = np.zeros(x.shape)
    eps_arr = np.array([float(eps)])
    step: Optional[float] = None
    for _ in range(iterations):
        _, grad = energy.value_and_grad(Field2D(x.values + delta), context)
        direction = op.filter(grad.values, 1.0)
        if step is None:
            size = np.sqrt(float(np.sum(grad.values * direction)))
            if size == 0.0:
                raise DegenerateGradientError("Energy gradient vanishes at the starting point")
            step = 10.0 * eps / size
        delta, _ = project_batch(op, (delta - step * direction)[None], eps_arr)
        delta = delta[0]
    return Field2D(delta)


@dataclass(frozen=True)
class DescentCheck:
    """Outcome of the first-order worst-case check."""
    decrease: float
    best_random: float
    linear_decrease: float
    best_random_linear: float
    degenerate: bool = False

    def passed(self, tolerance: float = 1e-6) -> bool:
        if self.degenerate:
            return True
        return self.decrease <= 0.0 and self.decrease <= self.best_random + tolerance


def first_order_descent_check(energy, x, op: SobolevOperator, eps: float = 1e-3, directions: int = 100,
                              seed: int = 0, context: Optional[StateBatch] = None) -> DescentCheck:
    """J(x + δ*) − J(x) against random directions of the same H^s radius.

    Random directions are eps·Σ_s^{1/2}z/‖z‖ for white z.
    """
    x = as_field(x)
    base, grad = energy.value_and_grad(x, context)
    try:
        delta = optimal_delta(op, grad, eps)
    except DegenerateGradientError:
        logger.info("Descent check skipped: zero gradient")
        return DescentCheck(0.0, 0.0, 0.0, 0.0, degenerate=True)

    sampler = NoiseSampler(derive_seed(seed, "probe"), x.shape, op)
    white = sampler.white_batch(directions)
    norms = np.sqrt(np.sum(white * white, axis=(-2, -1)))
    candidates = eps * op.filter(white, 0.5) / norms[:, None, None]

    values, _ = energy.value_and_grad_batch(x.values + candidates, context)
    decrease = energy.value_and_grad(x + delta, context)[0] - base
    return DescentCheck(
        decrease=decrease,
        best_random=float(np.min(values) - base),
        linear_decrease=float(np.sum(grad.values * delta.values)),
        best_random_linear=float(np.min(np.sum(grad.values * candidates, axis=(-2, -1)))),
    )


def couple_sample(adversary_velocity: VelocityFn, xt_winner: Field2D, x0: Field2D, cond: Field2D, t: float,
                  t_max: float = DEFAULT_T_MAX) -> Tuple[Field2D, Field2D]:
    """x̂₁ᵃ = x_tʷ + (1−t)·v_φ(x_tʷ, t, c), then x_tᵃ = (1−t)·x₀ + t·x̂₁ᵃ on the same noise."""
    t = float(t)
    if t >= t_max:
        raise SingularityError(t, t_max)
    velocity = adversary_velocity(xt_winner, t, cond)
    velocity.require_shape(xt_winner.shape, "adversary velocity")
    x1_hat = xt_winner + (1.0 - t) * velocity
    return x1_hat, reproject(x0, x1_hat, t)


class ConditionalTargetAdversary:
    """Identity adversary: its velocity is the on-path target (x_t − x₀)/t."""

    def velocity_for(self, x0: Field2D) -> VelocityFn:
        def velocity(xt: Field2D, t: float, cond: Field2D) -> Field2D:
            if t <= 0.0:
                raise ValidationError("The conditional-target adversary needs t > 0")
            return (xt - x0) / t
        return velocity


@dataclass(frozen=True)
class PerturbationPass:
    """Forward state of the adversary perturbation kept for its backward pass."""
    delta: np.ndarray
    colored: np.ndarray
    norms: np.ndarray
    eps: np.ndarray
    cache: object


def perturb(correction: ParametricField, op: SobolevOperator, trust: TrustRegion,
            xt: np.ndarray, cond: np.ndarray, t: np.ndarray) -> PerturbationPass:
    """δ = P_ε(Σ_s^{1/2} A_φ(x_t, t, c)) for a stack of states."""
    raw, cache = correction.forward_batch(xt, cond, t)
    colored = op.filter(raw, 0.5)
    eps = trust.epsilon_at(t)
    delta, norms = project_batch(op, colored, eps)
    return PerturbationPass(delta=delta, colored=colored, norms=norms, eps=eps, cache=cache)


def perturbation_backward(correction: ParametricField, op: SobolevOperator, forward_pass: PerturbationPass,
                          upstream: np.ndarray) -> FieldParams:
    """Parameter gradient of ⟨upstream, δ⟩."""
    d_colored = projection_vjp(op, forward_pass.colored, forward_pass.norms, forward_pass.eps, upstream)
    grads, _ = correction.backward_batch(forward_pass.cache, op.filter(d_colored, 0.5))
    return grads


def adversary_objective(correction: ParametricField, energy, batch: StateBatch, op: SobolevOperator,
                        trust: TrustRegion) -> Tuple[float, FieldParams]:
    """Mean J(x_t + δ) over the batch and its gradient w.r.t. the adversary parameters."""
    forward_pass = perturb(correction, op, trust, batch.xt, batch.cond, batch.t)
    values, grads = energy.value_and_grad_batch(batch.xt + forward_pass.delta, batch)
    loss = float(np.mean(values))
    return loss, perturbation_backward(correction, op, forward_pass, grads / len(batch))


class LearnedAdversary:
    """v_φ = v_base + δ, with v_base the frozen policy and δ the projected correction."""

    def __init__(self, base: ParametricField, correction: ParametricField, op: SobolevOperator,
                 trust: TrustRegion):
        self.base = base
        self.correction = correction
        self.op = op
        self.trust = trust

    def __call__(self, xt: Field2D, t: float, cond: Field2D) -> Field2D:
        forward_pass = perturb(self.correction, self.op, self.trust, xt.values[None], cond.values[None],
                               np.array([float(t)]))
        return self.base(xt, t, cond) + Field2D(forward_pass.delta[0])

    def velocity_for(self, x0: Field2D) -> VelocityFn:
        return self


@dataclass
class AdversaryState:
    """Trained adversary parameters with their optimizer settings and history."""
    params: FieldParams
    training_config: AdversaryTrainingConfig
    loss_curve: List[Tuple[int, float]] = field(default_factory=list)
    final_energy: float = float("nan")


def fit_adversary(correction: ParametricField, energy, states: Callable[[int], StateBatch], op: SobolevOperator,
                  trust: TrustRegion, cfg: AdversaryTrainingConfig) -> AdversaryState:
    """Projected training of the adversary on the energy of perturbed states.

    states(step) supplies the batch for each step. Raises DivergenceError on a
    non-finite energy.
    """
    params = correction.params
    adam = AdamState.zeros_like(params)
    curve: List[Tuple[int, float]] = []

    for step in range(cfg.steps):
        loss, grads = adversary_objective(correction.with_params(params), energy, states(step), op, trust)
        if not np.isfinite(loss):
            logger.error(f"Adversary training diverged at step {step}")
            raise DivergenceError(step, "adversary energy")
        curve.append((step, loss))

        if cfg.optimizer == "sgd":
            params = sgd_step(params, grads, cfg.lr)
        else:
            params, adam = adam_step(params, grads, adam, cfg.lr, weight_decay=cfg.weight_decay)

        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            logger.info(f"Adversary step {step + 1}/{cfg.steps}: energy {loss:.6g}")

    final_batch = states(max(cfg.steps - 1, 0))
    final_energy, _ = adversary_objective(correction.with_params(params), energy, final_batch, op, trust)
    return AdversaryState(params=params, training_config=cfg, loss_curve=curve, final_energy=final_energy)


def train_adversary(correction: ParametricField, policy: ParametricField,
                    pairs: Sequence[Tuple[Field2D, Field2D]], trust: TrustRegion, cfg: AdversaryTrainingConfig,
                    op: SobolevOperator, t_max: float = DEFAULT_T_MAX,
                    horizon: float = DEFAULT_HORIZON) -> AdversaryState:
    """Train A_φ against a frozen policy on (condition, endpoint) pairs.

    States are drawn on the noise-to-endpoint path with fresh (x₀, t) per item;
    the energy is the policy's residual energy toward the same endpoint.
    """
    if not pairs:
        raise ValidationError("Adversary training needs at least one pair")
    conds = np.stack([c.values for c, _ in pairs])
    endpoints = np.stack([x1.values for _, x1 in pairs])
    shape = conds.shape[1:]

    batch_sampler = NoiseSampler(derive_seed(cfg.seed, "batch"), shape)
    noise_sampler = NoiseSampler(derive_seed(cfg.seed, "adversary"), shape)
    time_sampler = NoiseSampler(derive_seed(cfg.seed, "time"), shape)
    batch_size = min(cfg.batch, len(pairs))
    # Bounded by t_max so the residual target stays finite.
    horizon = min(horizon, t_max * (1.0 - 1e-12))

    drawn = {}

    def states(step: int) -> StateBatch:
        if step not in drawn:
            index = np.minimum((batch_sampler.uniform(batch_size) * len(pairs)).astype(np.int64), len(pairs) - 1)
            x0 = noise_sampler.white_batch(batch_size)
            t = sample_times(time_sampler, batch_size, horizon)
            w = t[:, None, None]
            xt = (1.0 - w) * x0 + w * endpoints[index]
            drawn.clear()
            drawn[step] = StateBatch(xt=xt, cond=conds[index], t=t, x1=endpoints[index])
        return drawn[step]

    logger.info(f"Training adversary for {cfg.steps} steps on {len(pairs)} pairs, eps={trust.epsilon}")
    return fit_adversary(correction, ResidualEnergy(policy.frozen_copy(), t_max), states, op, trust, cfg)


def make_quadratic_task(op: SobolevOperator, count: int, seed: int, offset_scale: float = 10.0) -> Tuple[StateBatch, QuadraticEnergy]:
    """Fixed states and per-state quadratic energies far from their minima."""
    sampler = NoiseSampler(derive_seed(seed, "probe"), op.shape)
    xt = offset_scale * sampler.white_batch(count)
    cond = sampler.white_batch(count)
    centers = sampler.white_batch(count)
    t = 0.5 * np.ones(count)
    return StateBatch(xt=xt, cond=cond, t=t), QuadraticEnergy(centers)


def mean_cosine_to_optimal(correction: ParametricField, energy, batch: StateBatch, op: SobolevOperator,
                           trust: TrustRegion) -> float:
    """Average H^s cosine between the learned δ and δ* at each state."""
    forward_pass = perturb(correction, op, trust, batch.xt, batch.cond, batch.t)
    _, grads = energy.value_and_grad_batch(batch.xt, batch)
    cosines = [
        hs_cosine(op, forward_pass.delta[i], optimal_delta(op, grads[i], float(forward_pass.eps[i])))
        for i in range(len(batch))
    ]
    return float(np.mean(cosines))


@dataclass(frozen=True)
class CapacitySweep:
    """Capacity table with its trend flags."""
    rows: Tuple[CapacityRow, ...]
    monotone: bool
    saturated: bool


def capacity_sweep(widths: Sequence[int], batch: StateBatch, energy, op: SobolevOperator, trust: TrustRegion,
                   cfg: AdversaryTrainingConfig, tolerance: float = 1e-3) -> CapacitySweep:
    """Train one adversary per hidden width on a fixed task and tabulate the result.

    Cosines may dip by at most `tolerance` between consecutive widths and still
    count as nondecreasing.
    """
    if not widths:
        raise ValidationError("Capacity sweep needs at least one width")
    grid = op.shape
    rows = []
    for width in widths:
        model = VelocityMLP(grid, int(width))
        correction = ParametricField(model, model.init_params(cfg.seed))
        state = fit_adversary(correction, energy, lambda _: batch, op, trust, cfg)
        cosine = mean_cosine_to_optimal(correction.with_params(state.params), energy, batch, op, trust)
        rows.append(CapacityRow(width=int(width), final_energy=state.final_energy, cosine=cosine))
        logger.info(f"Capacity width {width}: energy {state.final_energy:.6g}, cosine {cosine:.6f}")

    cosines = [row.cosine for row in rows]
    monotone = all(b >= a - tolerance for a, b in zip(cosines, cosines[1:]))
    saturated = len(rows) < 2 or abs(cosines[-1] - cosines[-2]) <= 0.01
    if not saturated:
        logger.warning("Capacity sweep has not saturated at the largest width")
    return CapacitySweep(rows=tuple(rows), monotone=monotone, saturated=saturated)
