#!/usr/bin/env python3
"""
Tests for the parametric velocity fields, their gradients and the optimizers.
"""

import numpy as np
import pytest

from data_models import Field2D
from errors import ShapeMismatchError, StaleCacheError, ValidationError
from param_field import (
    AdamState, DirectionalGain, FieldParams, ParametricField, VelocityMLP, adam_step, backward, build_model,
    check_gradient, forward, gradient_check, sgd_step, warmup_lr,
)


GRID = (4, 4)


@pytest.fixture
def inputs():
    rng = np.random.default_rng(5)
    xt = rng.standard_normal((3,) + GRID)
    cond = rng.standard_normal((3,) + GRID)
    t = np.array([0.1, 0.5, 0.8])
    upstream = rng.standard_normal((3,) + GRID)
    return xt, cond, t, upstream


@pytest.fixture
def trained_net():
    model = VelocityMLP(GRID, hidden=8)
    return ParametricField(model, model.init_params(seed=3, zero_final=False))


class TestForward:
    def test_zero_init_outputs_zero(self, inputs):
        xt, cond, t, _ = inputs
        model = VelocityMLP(GRID, hidden=8)
        net = ParametricField(model, model.init_params(seed=1))
        out, _ = net.forward_batch(xt, cond, t)
        assert not np.any(out)

    def test_all_zero_parameters(self, inputs):
        xt, cond, t, _ = inputs
        model = VelocityMLP(GRID, hidden=8)
        net = ParametricField(model, model.init_params(seed=1).zeros_like())
        out, _ = net.forward_batch(xt, cond, t)
        assert not np.any(out)

    def test_deterministic(self, trained_net, inputs):
        xt, cond, t, _ = inputs
        a, _ = trained_net.forward_batch(xt, cond, t)
        b, _ = trained_net.forward_batch(xt, cond, t)
        assert np.array_equal(a, b)

    def test_output_shape(self, trained_net, inputs):
        xt, cond, t, _ = inputs
        out, _ = trained_net.forward_batch(xt, cond, t)
        assert out.shape == xt.shape

    def test_single_field_matches_batch(self, trained_net, inputs):
        xt, cond, t, _ = inputs
        batch, _ = trained_net.forward_batch(xt, cond, t)
        single = forward(trained_net, Field2D(xt[1]), Field2D(cond[1]), t[1])
        assert np.allclose(single.values, batch[1], atol=1e-12)

    def test_callable_as_velocity_field(self, trained_net, inputs):
        xt, cond, t, _ = inputs
        out = trained_net(Field2D(xt[0]), t[0], Field2D(cond[0]))
        assert out.shape == GRID

    def test_grid_mismatch(self, trained_net):
        with pytest.raises(ShapeMismatchError):
            trained_net.forward_batch(np.zeros((1, 5, 5)), np.zeros((1, 5, 5)), np.zeros(1))

    def test_same_seed_same_init(self):
        model = VelocityMLP(GRID, hidden=8)
        assert model.init_params(7).bytes_equal(model.init_params(7))
        assert not model.init_params(7).bytes_equal(model.init_params(8))

    def test_invalid_width(self):
        with pytest.raises(ValidationError):
            VelocityMLP(GRID, hidden=0)


class TestBackward:
    def test_parameter_gradients_match_finite_differences(self, trained_net, inputs):
        xt, cond, t, upstream = inputs
        report = gradient_check(trained_net, xt, cond, t, upstream, probes=50, epsilon=1e-5)
        assert report.passed(1e-4)
        assert report.probe_count == 50

    def test_input_gradient_matches_finite_differences(self, trained_net, inputs):
        xt, cond, t, upstream = inputs
        report = gradient_check(trained_net, xt, cond, t, upstream, probes=50, epsilon=1e-5, target="xt")
        assert report.target == "xt"
        assert report.passed(1e-4)

    def test_zero_upstream_gives_zero_gradients(self, trained_net, inputs):
        xt, cond, t, _ = inputs
        _, cache = trained_net.forward_batch(xt, cond, t)
        grads, d_xt = trained_net.backward_batch(cache, np.zeros_like(xt))
        assert not np.any(grads.flatten())
        assert not np.any(d_xt)

    def test_zero_init_input_gradient_is_zero(self, inputs):
        xt, cond, t, upstream = inputs
        model = VelocityMLP(GRID, hidden=8)
        net = ParametricField(model, model.init_params(seed=1))
        _, cache = net.forward_batch(xt, cond, t)
        _, d_xt = net.backward_batch(cache, upstream)
        assert not np.any(d_xt)

    def test_stale_cache_rejected(self, trained_net, inputs):
        xt, cond, t, upstream = inputs
        _, cache = trained_net.forward_batch(xt, cond, t)
        other = trained_net.with_params(sgd_step(trained_net.params, trained_net.params, 0.1))
        with pytest.raises(StaleCacheError):
            other.backward_batch(cache, upstream)

    def test_single_field_backward(self, trained_net, inputs):
        xt, cond, t, upstream = inputs
        _, cache = trained_net.forward(Field2D(xt[0]), Field2D(cond[0]), t[0])
        grads, d_xt = backward(trained_net, Field2D(upstream[0]), cache)
        assert grads.same_layout(trained_net.params)
        assert d_xt.shape == GRID

    def test_unknown_check_target(self, trained_net, inputs):
        with pytest.raises(ValidationError):
            gradient_check(trained_net, *inputs, target="weights")

    def test_check_gradient_flags_wrong_gradient(self):
        point = np.array([1.0, 2.0])
        report = check_gradient(lambda p: float(np.sum(p ** 2)), point, np.zeros(2), probes=10)
        assert not report.passed(1e-4)


class TestDirectionalGain:
    def test_forward_and_backward(self):
        direction = np.arange(4.0).reshape(2, 2)
        model = DirectionalGain(direction)
        net = ParametricField(model, FieldParams({"gain": np.array([0.5])}))
        out, cache = net.forward_batch(np.zeros((2, 2, 2)), np.zeros((2, 2, 2)), np.zeros(2))
        assert np.array_equal(out[1], 0.5 * direction)
        grads, _ = net.backward_batch(cache, np.ones((2, 2, 2)))
        assert grads["gain"][0] == pytest.approx(2 * direction.sum())

    def test_build_model_round_trip(self):
        model = VelocityMLP((4, 6), hidden=5)
        rebuilt = build_model(model.describe())
        assert rebuilt.grid == (4, 6) and rebuilt.hidden == 5

    def test_gain_model_needs_direction(self):
        with pytest.raises(ValidationError):
            build_model({"kind": "gain", "grid": "2x2"})

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            build_model({"kind": "transformer"})


class TestFieldParams:
    def test_blocks_are_read_only(self):
        params = FieldParams({"w": np.ones(3)})
        with pytest.raises(ValueError):
            params["w"][0] = 2.0

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            FieldParams({"w": np.array([np.nan])})

    def test_with_flat_layout(self):
        params = VelocityMLP(GRID, hidden=3).init_params(0, zero_final=False)
        rebuilt = params.with_flat(params.flatten())
        assert rebuilt.bytes_equal(params)
        with pytest.raises(ShapeMismatchError):
            params.with_flat(np.zeros(3))

    def test_frozen_copy_is_independent(self, trained_net):
        frozen = trained_net.frozen_copy()
        updated = trained_net.with_params(sgd_step(trained_net.params, trained_net.params, 0.5))
        assert frozen.params.bytes_equal(trained_net.params)
        assert not frozen.params.bytes_equal(updated.params)

    def test_frozen_copy_has_its_own_cache_token(self, trained_net, inputs):
        xt, cond, t, upstream = inputs
        frozen = trained_net.frozen_copy()
        assert frozen.params.token != trained_net.params.token
        _, cache = trained_net.forward_batch(xt, cond, t)
        with pytest.raises(StaleCacheError):
            frozen.backward_batch(cache, upstream)

    def test_with_params_checks_layout(self, trained_net):
        with pytest.raises(ValidationError):
            trained_net.with_params(FieldParams({"w": np.ones(2)}))


class TestOptimizers:
    def test_sgd_zero_lr(self):
        params = FieldParams({"w": np.array([1.0, -3.0])})
        assert sgd_step(params, FieldParams({"w": np.array([5.0, 5.0])}), 0.0).bytes_equal(params)

    def test_sgd_scalar_step(self):
        out = sgd_step(FieldParams({"w": np.array([1.0])}), FieldParams({"w": np.array([2.0])}), 0.1)
        assert out["w"][0] == pytest.approx(0.8)

    @pytest.mark.parametrize("g", [1e-3, 0.7, -250.0])
    def test_adam_first_step_magnitude(self, g):
        params = FieldParams({"w": np.array([0.0])})
        updated, state = adam_step(params, FieldParams({"w": np.array([g])}), AdamState.zeros_like(params), lr=0.01)
        assert abs(updated["w"][0]) == pytest.approx(0.01, rel=1e-4)
        assert np.sign(updated["w"][0]) == -np.sign(g)
        assert state.step == 1

    def test_adam_weight_decay(self):
        params = FieldParams({"w": np.array([2.0])})
        zero = FieldParams({"w": np.array([0.0])})
        updated, _ = adam_step(params, zero, AdamState.zeros_like(params), lr=0.1, weight_decay=0.5)
        assert updated["w"][0] == pytest.approx(2.0 * (1 - 0.05))

    def test_adam_zero_lr(self):
        params = FieldParams({"w": np.array([2.0, 3.0])})
        grads = FieldParams({"w": np.array([1.0, -1.0])})
        updated, _ = adam_step(params, grads, AdamState.zeros_like(params), lr=0.0, weight_decay=0.1)
        assert updated.bytes_equal(params)

    def test_warmup(self):
        assert warmup_lr(1e-3, 0, 200) == pytest.approx(5e-6)
        assert warmup_lr(1e-3, 199, 200) == pytest.approx(1e-3)
        assert warmup_lr(1e-3, 5000, 200) == pytest.approx(1e-3)
        assert warmup_lr(1e-3, 0, 0) == 1e-3
