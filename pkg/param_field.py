"""
Parametric Velocity Fields

A small two-hidden-layer tanh network v(x_t, t, c) with exact reverse-mode
gradients, used as the policy v_θ, the frozen reference v_ref and the
adversary correction A_φ. Also: a one-parameter directional field, SGD and
AdamW updates, and central finite-difference gradient checks.

Network: z = [vec(x_t) ‖ vec(c) ‖ emb(t)], emb(t) = (sin πt, cos πt, sin 2πt, cos 2πt)
    h1 = tanh(z W1 + b1), h2 = tanh(h1 W2 + b2)
    v  = h2 W3 + b3 + g(t)·vec(x_t) + h(t)·vec(c),  g, h linear in (1, emb(t))
The final layer and the skip gains start at zero, so a fresh network outputs
the zero field and alignment starts exactly at the reference.

Created: October 2026
Changes: Added time-gated linear skip path; params are immutable, updates return new objects
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from colored_noise import NoiseSampler, derive_seed
from data_models import Field2D, GradCheckReport
from errors import ShapeMismatchError, StaleCacheError, ValidationError


logger = logging.getLogger(__name__)

EMBED_DIM = 4
_tokens = itertools.count(1)


def time_embedding(t: np.ndarray) -> np.ndarray:
    """(B,) times -> (B, 4) sinusoidal embedding."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    return np.stack(
        [np.sin(np.pi * t), np.cos(np.pi * t), np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)], axis=1
    )


def time_features(t: np.ndarray) -> np.ndarray:
    """(B,) times -> (B, 5) features (1, emb(t)) driving the skip gains."""
    emb = time_embedding(t)
    return np.concatenate([np.ones((emb.shape[0], 1)), emb], axis=1)


@dataclass(frozen=True, eq=False)
class FieldParams:
    """Named parameter blocks; gradients use the same type and block shapes."""
    blocks: Dict[str, np.ndarray]
    token: int = field(default_factory=lambda: next(_tokens))

    def __post_init__(self):
        frozen = {}
        for name, block in self.blocks.items():
            arr = np.array(block, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"Parameter block '{name}' contains NaN or Inf values")
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "blocks", frozen)

    @property
    def names(self) -> List[str]:
        return list(self.blocks)

    @property
    def param_count(self) -> int:
        return int(sum(block.size for block in self.blocks.values()))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def flatten(self) -> np.ndarray:
        return np.concatenate([block.ravel() for block in self.blocks.values()])

    def with_flat(self, vector: np.ndarray) -> "FieldParams":
        """New params with this layout and the given flat values."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.param_count,):
            raise ShapeMismatchError((self.param_count,), vector.shape, "parameter vector")
        blocks, offset = {}, 0
        for name, block in self.blocks.items():
            blocks[name] = vector[offset:offset + block.size].reshape(block.shape)
            offset += block.size
        return FieldParams(blocks)

    def zeros_like(self) -> "FieldParams":
        return FieldParams({name: np.zeros_like(block) for name, block in self.blocks.items()})

    def same_layout(self, other: "FieldParams") -> bool:
        return self.names == other.names and all(
            self.blocks[n].shape == other.blocks[n].shape for n in self.names
        )

    def bytes_equal(self, other: "FieldParams") -> bool:
        return self.same_layout(other) and all(
            self.blocks[n].tobytes() == other.blocks[n].tobytes() for n in self.names
        )


@dataclass(frozen=True, eq=False)
class ForwardCache:
    """Activations saved by forward_batch for the matching backward pass."""
    token: int
    inputs: np.ndarray
    hidden1: np.ndarray
    hidden2: np.ndarray
    features: np.ndarray
    xt_flat: np.ndarray
    cond_flat: np.ndarray
    gain_x: np.ndarray


def _check_cache(params: FieldParams, cache: ForwardCache) -> None:
    if cache.token != params.token:
        raise StaleCacheError(
            f"Activation cache belongs to params #{cache.token}, backward called with params #{params.token}"
        )


class VelocityMLP:
    """Two-hidden-layer tanh network on flattened grids."""

    kind = "mlp"

    def __init__(self, grid: Tuple[int, int] = (16, 16), hidden: int = 64):
        if hidden < 1:
            raise ValidationError(f"hidden width must be positive, got {hidden}")
        self.grid = (int(grid[0]), int(grid[1]))
        self.hidden = int(hidden)
        self.cells = self.grid[0] * self.grid[1]
        self.input_dim = 2 * self.cells + EMBED_DIM
        self.logger = logging.getLogger(__name__)

    def block_shapes(self) -> Dict[str, Tuple[int, ...]]:
        h, n = self.hidden, self.cells
        return {
            "w1": (self.input_dim, h), "b1": (h,),
            "w2": (h, h), "b2": (h,),
            "w3": (h, n), "b3": (n,),
            "skip_x": (EMBED_DIM + 1,), "skip_c": (EMBED_DIM + 1,),
        }

    def describe(self) -> Dict[str, str]:
        return {"kind": self.kind, "grid": f"{self.grid[0]}x{self.grid[1]}", "hidden": str(self.hidden)}

    def init_params(self, seed: int, zero_final: bool = True) -> FieldParams:
        """Scaled-normal hidden layers; final layer and skip gains zero unless zero_final=False."""
        sampler = NoiseSampler(derive_seed(seed, "init"), (1, 1))
        blocks = {}
        for name, shape in self.block_shapes().items():
            size = int(np.prod(shape))
            if name in ("w1", "w2"):
                blocks[name] = sampler.standard_normal(size).reshape(shape) / np.sqrt(shape[0])
            elif name == "w3" and not zero_final:
                blocks[name] = sampler.standard_normal(size).reshape(shape) / np.sqrt(shape[0])
            elif name.startswith("skip") and not zero_final:
                blocks[name] = 0.1 * sampler.standard_normal(size).reshape(shape)
            else:
                blocks[name] = np.zeros(shape)
        params = FieldParams(blocks)
        self.logger.debug(f"Initialised {self.kind} {self.describe()} with {params.param_count} parameters")
        return params

    def _check_inputs(self, xt: np.ndarray, cond: np.ndarray, t: np.ndarray) -> None:
        if xt.shape[1:] != self.grid:
            raise ShapeMismatchError(self.grid, xt.shape[1:], "x_t")
        if cond.shape != xt.shape:
            raise ShapeMismatchError(xt.shape, cond.shape, "condition")
        if t.shape != (xt.shape[0],):
            raise ShapeMismatchError((xt.shape[0],), t.shape, "time vector")

    def forward_batch(self, params: FieldParams, xt: np.ndarray, cond: np.ndarray,
                      t: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        """(B, H, W) states and conditions, (B,) times -> (B, H, W) velocities."""
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        self._check_inputs(xt, cond, t)
        batch = xt.shape[0]
        xt_flat = xt.reshape(batch, -1)
        cond_flat = cond.reshape(batch, -1)
        inputs = np.concatenate([xt_flat, cond_flat, time_embedding(t)], axis=1)

        hidden1 = np.tanh(inputs @ params["w1"] + params["b1"])
        hidden2 = np.tanh(hidden1 @ params["w2"] + params["b2"])
        features = time_features(t)
        gain_x = features @ params["skip_x"]
        gain_c = features @ params["skip_c"]
        out = hidden2 @ params["w3"] + params["b3"] + gain_x[:, None] * xt_flat + gain_c[:, None] * cond_flat

        cache = ForwardCache(
            token=params.token, inputs=inputs, hidden1=hidden1, hidden2=hidden2,
            features=features, xt_flat=xt_flat, cond_flat=cond_flat, gain_x=gain_x,
        )
        return out.reshape(xt.shape), cache

    def backward_batch(self, params: FieldParams, cache: ForwardCache,
                       upstream: np.ndarray) -> Tuple[FieldParams, np.ndarray]:
        """Gradients of Σ⟨upstream, v⟩ w.r.t. the parameters and x_t."""
        _check_cache(params, cache)
        batch = cache.inputs.shape[0]
        if upstream.shape != (batch,) + self.grid:
            raise ShapeMismatchError((batch,) + self.grid, upstream.shape, "upstream")
        up = upstream.reshape(batch, -1)

        d_hidden2 = (up @ params["w3"].T) * (1.0 - cache.hidden2 ** 2)
        d_hidden1 = (d_hidden2 @ params["w2"].T) * (1.0 - cache.hidden1 ** 2)
        d_inputs = d_hidden1 @ params["w1"].T

        grads = FieldParams({
            "w1": cache.inputs.T @ d_hidden1, "b1": d_hidden1.sum(axis=0),
            "w2": cache.hidden1.T @ d_hidden2, "b2": d_hidden2.sum(axis=0),
            "w3": cache.hidden2.T @ up, "b3": up.sum(axis=0),
            "skip_x": cache.features.T @ np.sum(up * cache.xt_flat, axis=1),
            "skip_c": cache.features.T @ np.sum(up * cache.cond_flat, axis=1),
        })
        d_xt = d_inputs[:, :self.cells] + cache.gain_x[:, None] * up
        return grads, d_xt.reshape((batch,) + self.grid)


class DirectionalGain:
    """One-parameter field v = g·d for a fixed direction d, independent of inputs."""

    kind = "gain"

    def __init__(self, direction: np.ndarray):
        self.direction = np.array(direction, dtype=np.float64)
        self.grid = self.direction.shape

    def block_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {"gain": (1,)}

    def describe(self) -> Dict[str, str]:
        return {"kind": self.kind, "grid": f"{self.grid[0]}x{self.grid[1]}"}

    def init_params(self, seed: int = 0, zero_final: bool = True) -> FieldParams:
        return FieldParams({"gain": np.zeros(1)})

    def forward_batch(self, params: FieldParams, xt: np.ndarray, cond: np.ndarray,
                      t: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        if xt.shape[1:] != self.grid:
            raise ShapeMismatchError(self.grid, xt.shape[1:], "x_t")
        batch = xt.shape[0]
        out = np.broadcast_to(params["gain"][0] * self.direction, xt.shape).copy()
        empty = np.zeros((batch, 0))
        cache = ForwardCache(
            token=params.token, inputs=empty, hidden1=empty, hidden2=empty, features=empty,
            xt_flat=empty, cond_flat=empty, gain_x=np.zeros(batch),
        )
        return out, cache

    def backward_batch(self, params: FieldParams, cache: ForwardCache,
                       upstream: np.ndarray) -> Tuple[FieldParams, np.ndarray]:
        _check_cache(params, cache)
        gain_grad = np.array([np.sum(upstream * self.direction)])
        return FieldParams({"gain": gain_grad}), np.zeros_like(upstream)


class ParametricField:
    """A model bound to its parameters; callable as a velocity field v(x, t, c)."""

    def __init__(self, model, params: FieldParams):
        self.model = model
        self.params = params

    @property
    def grid(self) -> Tuple[int, int]:
        return tuple(self.model.grid)

    def __call__(self, xt: Field2D, t: float, cond: Field2D) -> Field2D:
        out, _ = self.forward(xt, cond, t)
        return out

    def forward(self, xt: Field2D, cond: Field2D, t: float) -> Tuple[Field2D, ForwardCache]:
        out, cache = self.model.forward_batch(self.params, xt.values[None], cond.values[None], np.array([t]))
        return Field2D(out[0]), cache

    def backward(self, upstream: Field2D, cache: ForwardCache) -> Tuple[FieldParams, Field2D]:
        grads, d_xt = self.model.backward_batch(self.params, cache, upstream.values[None])
        return grads, Field2D(d_xt[0])

    def forward_batch(self, xt: np.ndarray, cond: np.ndarray, t: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        return self.model.forward_batch(self.params, xt, cond, t)

    def backward_batch(self, cache: ForwardCache, upstream: np.ndarray) -> Tuple[FieldParams, np.ndarray]:
        return self.model.backward_batch(self.params, cache, upstream)

    def with_params(self, params: FieldParams) -> "ParametricField":
        if not self.params.same_layout(params):
            raise ValidationError("Parameter layout does not match the model")
        return ParametricField(self.model, params)

    def frozen_copy(self) -> "ParametricField":
        """Independent copy with its own cache token, used as a frozen reference or policy."""
        return ParametricField(self.model, FieldParams(dict(self.params.blocks)))


def forward(net: ParametricField, xt: Field2D, cond: Field2D, t: float) -> Field2D:
    """v(x_t, t, c) for a single field."""
    return net(xt, t, cond)


def backward(net: ParametricField, upstream: Field2D, cache: ForwardCache) -> Tuple[FieldParams, Field2D]:
    """Parameter gradient and ∂/∂x_t of ⟨upstream, v(x_t, t, c)⟩."""
    return net.backward(upstream, cache)


def _require_finite_grads(grads: FieldParams) -> None:
    if not np.all(np.isfinite(grads.flatten())):
        raise ValidationError("Gradients contain NaN or Inf values")


def sgd_step(params: FieldParams, grads: FieldParams, lr: float) -> FieldParams:
    """p ← p − lr·g."""
    if not params.same_layout(grads):
        raise ValidationError("Gradient layout does not match the parameters")
    _require_finite_grads(grads)
    return FieldParams({n: params[n] - lr * grads[n] for n in params.names})


@dataclass
class AdamState:
    """First and second moment estimates with the step counter."""
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: FieldParams) -> "AdamState":
        return cls(
            m={n: np.zeros_like(b) for n, b in params.blocks.items()},
            v={n: np.zeros_like(b) for n, b in params.blocks.items()},
        )


def adam_step(params: FieldParams, grads: FieldParams, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> Tuple[FieldParams, AdamState]:
    """AdamW: bias-corrected moments with decoupled weight decay."""
    if not params.same_layout(grads):
        raise ValidationError("Gradient layout does not match the parameters")
    _require_finite_grads(grads)

    step = state.step + 1
    m, v, updated = {}, {}, {}
    for name in params.names:
        g = grads[name]
        m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m[name] / (1.0 - beta1 ** step)
        v_hat = v[name] / (1.0 - beta2 ** step)
        decayed = params[name] * (1.0 - lr * weight_decay)
        updated[name] = decayed - lr * m_hat / (np.sqrt(v_hat) + eps)
    return FieldParams(updated), AdamState(m=m, v=v, step=step)


def warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    """Linear warmup to base_lr over warmup_steps, constant afterwards."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, (step + 1) / warmup_steps)


def check_gradient(objective: Callable[[np.ndarray], float], point: np.ndarray, analytic: np.ndarray,
                   probes: int = 50, epsilon: float = 1e-5, seed: int = 0, target: str = "params",
                   floor: float = 1e-6) -> GradCheckReport:
    """Central differences at `probes` random coordinates of a flat point.

    Relative error per probe is |a − n| / max(|a|, |n|, floor).
    """
    point = np.asarray(point, dtype=np.float64).ravel()
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if point.shape != analytic.shape:
        raise ShapeMismatchError(point.shape, analytic.shape, "analytic gradient")

    sampler = NoiseSampler(derive_seed(seed, "probe"), (1, 1))
    indices = np.minimum((sampler.uniform(probes) * point.size).astype(np.int64), point.size - 1)

    worst = 0.0
    for index in indices:
        shifted = point.copy()
        shifted[index] = point[index] + epsilon
        upper = objective(shifted)
        shifted[index] = point[index] - epsilon
        lower = objective(shifted)
        numeric = (upper - lower) / (2.0 * epsilon)
        scale = max(abs(analytic[index]), abs(numeric), floor)
        worst = max(worst, abs(analytic[index] - numeric) / scale)

    report = GradCheckReport(max_relative_error=worst, probe_count=int(probes), epsilon=epsilon, target=target)
    logger.debug(f"Gradient check on {target}: max relative error {worst:.3e} over {probes} probes")
    return report


def gradient_check(net: ParametricField, xt: np.ndarray, cond: np.ndarray, t: np.ndarray,
                   upstream: np.ndarray, probes: int = 50, epsilon: float = 1e-5, seed: int = 0,
                   target: str = "params") -> GradCheckReport:
    """Finite-difference check of backward_batch for f = Σ⟨upstream, v⟩.

    target is 'params' or 'xt'.
    """
    _, cache = net.forward_batch(xt, cond, t)
    grads, d_xt = net.backward_batch(cache, upstream)

    if target == "params":
        def objective(vector: np.ndarray) -> float:
            out, _ = net.model.forward_batch(net.params.with_flat(vector), xt, cond, t)
            return float(np.sum(upstream * out))
        return check_gradient(objective, net.params.flatten(), grads.flatten(), probes, epsilon, seed, target)

    if target == "xt":
        def objective(vector: np.ndarray) -> float:
            out, _ = net.forward_batch(vector.reshape(xt.shape), cond, t)
            return float(np.sum(upstream * out))
        return check_gradient(objective, xt.ravel(), d_xt.ravel(), probes, epsilon, seed, target)

    raise ValidationError(f"Unknown gradient-check target '{target}'")


def build_model(meta: Dict[str, str], direction: Optional[np.ndarray] = None):
    """Recreate a model from its describe() metadata."""
    kind = meta.get("kind")
    if kind == VelocityMLP.kind:
        height, width = (int(v) for v in meta["grid"].lower().split("x"))
        return VelocityMLP((height, width), int(meta["hidden"]))
    if kind == DirectionalGain.kind:
        if direction is None:
            raise ValidationError("A directional gain model needs its direction field")
        return DirectionalGain(direction)
    raise ValidationError(f"Unknown model kind '{kind}'")
