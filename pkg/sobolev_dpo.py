"""
Sobolev Preference Losses

Residuals against the conditional target, Euclidean log-likelihood ratios, the
Sobolev energy gap and the preference losses built on it:

    gap(x)  = ‖γ_θ(x)‖²_{H^s} − ‖γ_ref(x)‖²_{H^s}
    z       = β·(gap(x_tˡ) − gap(x_tʷ))
    loss    = mean softplus(−z) = mean −log σ(z)

dpo_l2_loss is the same computation with the identity operator, so at s=0 the
Sobolev and Euclidean losses agree bit for bit. The Gaussian-likelihood
constants are absorbed into β.

Created: October 2026
Changes: Winner and loser branches share one batched policy pass
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.special

from adversary import couple_sample
from colored_noise import NoiseSampler, sample_white
from data_models import EnergyGap, Field2D
from errors import ShapeMismatchError, SingularityError, ValidationError
from flow_match import DEFAULT_HORIZON, DEFAULT_T_MAX, VelocityFn, sample_times, target_velocity_conditional
from param_field import FieldParams, ParametricField
from spectral_core import SobolevOperator, make_sobolev, sobolev_norm_sq


logger = logging.getLogger(__name__)

DEFAULT_BETA = 2000.0


@dataclass(frozen=True)
class PreferenceItem:
    """(c, x₁ʷ, x₁ˡ) with the noise x₀ and time t shared by both branches."""
    cond: Field2D
    winner: Field2D
    loser: Field2D
    x0: Field2D
    t: float


@dataclass(frozen=True)
class PreferenceBatch:
    """Preference triplets with a shared temperature β."""
    items: Tuple[PreferenceItem, ...]
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if not self.items:
            raise ValidationError("A preference batch needs at least one item")
        if not np.isfinite(self.beta) or self.beta <= 0:
            raise ValidationError(f"beta must be positive, got {self.beta}")
        shape = self.items[0].cond.shape
        for item in self.items:
            for what in ("cond", "winner", "loser", "x0"):
                getattr(item, what).require_shape(shape, what)
            if not 0.0 <= item.t < 1.0:
                raise ValidationError(f"t must lie in [0, 1), got {item.t}")

    @classmethod
    def build(cls, conds: Sequence[Field2D], winners: Sequence[Field2D], losers: Sequence[Field2D],
              noise: NoiseSampler, times: NoiseSampler, beta: float = DEFAULT_BETA,
              horizon: float = DEFAULT_HORIZON, stratified: bool = False) -> "PreferenceBatch":
        """Draw one x₀ and one t per triplet and share them across both branches."""
        if not len(conds) == len(winners) == len(losers):
            raise ValidationError(
                f"Triplet lists differ in length: {len(conds)}, {len(winners)}, {len(losers)}"
            )
        t_values = sample_times(times, len(conds), horizon, stratified)
        items = tuple(
            PreferenceItem(cond=c, winner=w, loser=l, x0=sample_white(noise), t=float(t))
            for c, w, l, t in zip(conds, winners, losers, t_values)
        )
        return cls(items=items, beta=beta)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.items[0].cond.shape

    def stack(self, what: str) -> np.ndarray:
        return np.stack([getattr(item, what).values for item in self.items])

    def times(self) -> np.ndarray:
        return np.array([item.t for item in self.items])

    def with_losers(self, losers: Sequence[Field2D]) -> "PreferenceBatch":
        """Same conditions, winners, noise and times with replaced loser endpoints."""
        if len(losers) != len(self.items):
            raise ValidationError(f"Expected {len(self.items)} losers, got {len(losers)}")
        items = tuple(
            PreferenceItem(cond=i.cond, winner=i.winner, loser=l, x0=i.x0, t=i.t)
            for i, l in zip(self.items, losers)
        )
        return PreferenceBatch(items=items, beta=self.beta)


@dataclass(frozen=True)
class PreferenceLossResult:
    """Mean loss, policy gradient and per-item diagnostics."""
    loss: float
    grads: FieldParams
    winner_gaps: np.ndarray
    loser_gaps: np.ndarray
    margins: np.ndarray

    @property
    def accuracy(self) -> float:
        """Fraction of items whose implicit reward prefers the winner."""
        return float(np.mean(self.margins > 0))

    @property
    def reward_margin(self) -> float:
        return float(np.mean(self.margins))


def residual(v_eval: VelocityFn, xt: Field2D, cond: Field2D, t: float, x1: Field2D,
             t_max: float = DEFAULT_T_MAX) -> Field2D:
    """γ = v(x_t, t, c) − u_t(x_t | x₁)."""
    target = target_velocity_conditional(xt, x1, t, t_max)
    velocity = v_eval(xt, t, cond)
    velocity.require_shape(xt.shape, "velocity")
    return velocity - target


def log_ratio_l2(gamma_pol: Field2D, gamma_ref: Field2D) -> float:
    """−(‖γ_pol‖² − ‖γ_ref‖²), the Euclidean log-likelihood ratio up to constants."""
    gamma_ref.require_shape(gamma_pol.shape)
    return -(gamma_pol.energy() - gamma_ref.energy())


def energy_gap(op: SobolevOperator, gamma_pol: Field2D, gamma_ref: Field2D) -> EnergyGap:
    """‖γ_pol‖²_{H^s} − ‖γ_ref‖²_{H^s}."""
    gamma_ref.require_shape(gamma_pol.shape)
    return EnergyGap.from_energies(sobolev_norm_sq(op, gamma_pol), sobolev_norm_sq(op, gamma_ref))


def _conditional_targets(states: np.ndarray, endpoints: np.ndarray, t: np.ndarray, t_max: float) -> np.ndarray:
    late = t >= t_max
    if np.any(late):
        raise SingularityError(float(t[late][0]), t_max)
    return (endpoints - states) / (1.0 - t)[:, None, None]


def _path_states(x0: np.ndarray, x1: np.ndarray, t: np.ndarray) -> np.ndarray:
    w = t[:, None, None]
    return (1.0 - w) * x0 + w * x1


def preference_loss(batch: PreferenceBatch, policy: ParametricField, reference: ParametricField,
                    op: SobolevOperator, t_max: float = DEFAULT_T_MAX,
                    loser_endpoints: Optional[np.ndarray] = None) -> PreferenceLossResult:
    """Shared core of the Euclidean, Sobolev and adversarial preference losses.

    Losers enter through their endpoint x₁ˡ; both branches are placed on the path
    of the item's own x₀ at the item's own t.
    """
    op.check_shape(batch.shape, "preference batch")
    n = len(batch)
    t = batch.times()
    cond = batch.stack("cond")
    x0 = batch.stack("x0")
    winners = batch.stack("winner")
    losers = batch.stack("loser") if loser_endpoints is None else loser_endpoints
    if losers.shape != winners.shape:
        raise ShapeMismatchError(winners.shape, losers.shape, "loser endpoints")

    endpoints = np.concatenate([winners, losers])
    states = _path_states(np.concatenate([x0, x0]), endpoints, np.concatenate([t, t]))
    both_t = np.concatenate([t, t])
    both_cond = np.concatenate([cond, cond])
    targets = _conditional_targets(states, endpoints, both_t, t_max)

    v_pol, cache = policy.forward_batch(states, both_cond, both_t)
    v_ref, _ = reference.forward_batch(states, both_cond, both_t)
    gamma_pol = v_pol - targets
    gamma_ref = v_ref - targets

    gaps = op.norm_sq_batch(gamma_pol) - op.norm_sq_batch(gamma_ref)
    winner_gaps, loser_gaps = gaps[:n], gaps[n:]
    margins = batch.beta * (loser_gaps - winner_gaps)
    loss = float(np.mean(np.logaddexp(0.0, -margins)))

    # dL/dz = −σ(−z)/n; dz/dγ_pol is +2βΣ⁻¹γ on the loser branch and −2βΣ⁻¹γ on the winner branch
    d_margin = -scipy.special.expit(-margins) / n
    sign = np.concatenate([-np.ones(n), np.ones(n)])
    scale = 2.0 * batch.beta * sign * np.concatenate([d_margin, d_margin])
    upstream = scale[:, None, None] * op.filter(gamma_pol, -1.0)
    grads, _ = policy.backward_batch(cache, upstream)

    return PreferenceLossResult(
        loss=loss, grads=grads, winner_gaps=winner_gaps, loser_gaps=loser_gaps, margins=margins,
    )


def sdpo_loss(batch: PreferenceBatch, policy: ParametricField, reference: ParametricField,
              op: SobolevOperator, t_max: float = DEFAULT_T_MAX) -> PreferenceLossResult:
    """Sobolev preference loss over static losers; the reference only supplies constants."""
    return preference_loss(batch, policy, reference, op, t_max)


def dpo_l2_loss(batch: PreferenceBatch, policy: ParametricField, reference: ParametricField,
                t_max: float = DEFAULT_T_MAX) -> PreferenceLossResult:
    """Euclidean preference baseline: sdpo_loss with Σ = I."""
    return preference_loss(batch, policy, reference, make_sobolev(0.0, *batch.shape), t_max)


def asdpo_loss(batch: PreferenceBatch, policy: ParametricField, reference: ParametricField,
               adversary, op: SobolevOperator, t_max: float = DEFAULT_T_MAX) -> PreferenceLossResult:
    """Adversarial preference loss: the loser endpoint is x̂₁ᵃ from coupled sampling.

    The batch's own loser fields are ignored. The adversary is frozen here and
    receives no gradient.
    """
    endpoints = []
    for item in batch.items:
        winner_state = Field2D((1.0 - item.t) * item.x0.values + item.t * item.winner.values)
        x1_hat, _ = couple_sample(adversary.velocity_for(item.x0), winner_state, item.x0, item.cond, item.t, t_max)
        endpoints.append(x1_hat.values)
    return preference_loss(batch, policy, reference, op, t_max, loser_endpoints=np.stack(endpoints))
