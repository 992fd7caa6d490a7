#!/usr/bin/env python3
"""
Tests for the DCT transforms and the Sobolev operator.
"""

import numpy as np
import pytest

from data_models import Field2D, Spectrum2D
from errors import ShapeMismatchError, ValidationError
from spectral_core import (
    apply_sigma, apply_sigma_inv, apply_sigma_power, apply_sigma_sqrt, dct2, dct2_forward, dct2_inverse,
    dct_matrix, idct2, make_sobolev, sobolev_gradient, sobolev_inner, sobolev_norm_sq,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def single_mode(shape, kx, ky, value=1.0):
    coeffs = np.zeros(shape)
    coeffs[kx, ky] = value
    return Field2D(idct2(coeffs))


class TestDct:
    def test_constant_field_has_only_dc(self):
        spectrum = dct2_forward(Field2D(np.ones((4, 4))))
        expected = np.zeros((4, 4))
        expected[0, 0] = 4.0
        assert np.allclose(spectrum.coefficients, expected, atol=1e-12)

    def test_zero_field_gives_zero_spectrum(self):
        assert not np.any(dct2_forward(Field2D.zeros(5, 3)).coefficients)

    @pytest.mark.parametrize("shape", [(8, 8), (16, 16), (33, 17)])
    def test_parseval(self, rng, shape):
        values = rng.standard_normal(shape)
        coeffs = dct2_forward(Field2D(values)).coefficients
        assert np.sum(coeffs ** 2) == pytest.approx(np.sum(values ** 2), rel=1e-10)

    def test_inverse_of_dc_spectrum(self):
        coeffs = np.zeros((4, 4))
        coeffs[0, 0] = 1.0
        field = dct2_inverse(Spectrum2D(coeffs))
        assert np.allclose(field.values, 0.25, atol=1e-12)

    def test_round_trip(self, rng):
        values = rng.standard_normal((16, 16))
        back = dct2_inverse(dct2_forward(Field2D(values)))
        assert np.max(np.abs(back.values - values)) < 1e-10

    def test_fast_and_matrix_paths_agree(self, rng):
        values = rng.standard_normal((3, 12, 7))
        assert np.max(np.abs(dct2(values) - dct2(values, method="matrix"))) < 1e-9
        assert np.max(np.abs(idct2(values) - idct2(values, method="matrix"))) < 1e-9

    def test_dct_matrix_is_orthonormal(self):
        matrix = dct_matrix(9)
        assert np.allclose(matrix @ matrix.T, np.eye(9), atol=1e-12)

    def test_non_finite_input_rejected(self):
        values = np.ones((4, 4))
        values[1, 2] = np.nan
        with pytest.raises(ValidationError):
            dct2_forward(values)

    def test_unknown_method_rejected(self):
        with pytest.raises(ValidationError):
            dct2(np.ones((2, 2)), method="wavelet")

    def test_bad_frequency_index_rejected(self):
        with pytest.raises(ShapeMismatchError):
            Spectrum2D(np.ones((4, 4)), freq_index=np.zeros((2, 3, 3)))


class TestSobolevOperator:
    def test_order_zero_weights_are_one(self):
        op = make_sobolev(0.0, 6, 5)
        assert np.all(op.weights == 1.0)
        assert op.is_identity

    def test_weight_values(self):
        op = make_sobolev(1.5, 8, 8)
        assert op.weights[0, 0] == 1.0
        assert op.weights[1, 0] == pytest.approx(2 ** -1.5, rel=1e-12)
        assert op.weights[0, 1] == pytest.approx(0.353553, abs=1e-6)

    @pytest.mark.parametrize("s", [-0.5, np.nan, np.inf])
    def test_invalid_order_rejected(self, s):
        with pytest.raises(ValidationError):
            make_sobolev(s, 4, 4)

    def test_identity_at_zero(self, rng):
        op = make_sobolev(0.0, 8, 8)
        f = Field2D(rng.standard_normal((8, 8)))
        for fn in (apply_sigma, apply_sigma_inv, apply_sigma_sqrt):
            assert np.array_equal(fn(op, f).values, f.values)

    def test_constant_field_unchanged(self):
        op = make_sobolev(2.0, 8, 8)
        f = Field2D.full(8, 8, 3.0)
        assert np.allclose(apply_sigma(op, f).values, 3.0, atol=1e-12)

    def test_self_adjoint(self, rng):
        op = make_sobolev(1.5, 8, 8)
        f, g = Field2D(rng.standard_normal((8, 8))), Field2D(rng.standard_normal((8, 8)))
        assert apply_sigma(op, f).inner(g) == pytest.approx(f.inner(apply_sigma(op, g)), abs=1e-10)

    def test_inverse_pair(self, rng):
        op = make_sobolev(1.5, 8, 8)
        f = Field2D(rng.standard_normal((8, 8)))
        assert np.max(np.abs(apply_sigma_inv(op, apply_sigma(op, f)).values - f.values)) < 1e-9

    def test_square_root_composes_to_sigma(self, rng):
        op = make_sobolev(1.5, 8, 8)
        f = Field2D(rng.standard_normal((8, 8)))
        twice = apply_sigma_sqrt(op, apply_sigma_sqrt(op, f))
        assert np.max(np.abs(twice.values - apply_sigma(op, f).values)) < 1e-9

    def test_arbitrary_power(self, rng):
        op = make_sobolev(1.0, 8, 8)
        f = Field2D(rng.standard_normal((8, 8)))
        quarter = apply_sigma_power(op, apply_sigma_power(op, f, 0.25), 0.75)
        assert np.max(np.abs(quarter.values - apply_sigma(op, f).values)) < 1e-9

    def test_sobolev_gradient_is_sigma(self, rng):
        op = make_sobolev(1.5, 8, 8)
        g = Field2D(rng.standard_normal((8, 8)))
        assert np.array_equal(sobolev_gradient(op, g).values, apply_sigma(op, g).values)

    def test_shape_mismatch(self):
        op = make_sobolev(1.0, 8, 8)
        with pytest.raises(ShapeMismatchError):
            apply_sigma(op, Field2D.zeros(4, 4))


class TestSobolevInner:
    def test_order_zero_is_l2(self, rng):
        op = make_sobolev(0.0, 8, 8)
        f, g = Field2D(rng.standard_normal((8, 8))), Field2D(rng.standard_normal((8, 8)))
        assert sobolev_inner(op, f, g) == pytest.approx(f.inner(g), abs=1e-10)

    def test_constant_fields(self):
        op = make_sobolev(2.5, 6, 6)
        f = Field2D.full(6, 6, 0.5)
        assert sobolev_inner(op, f, f) == pytest.approx(f.energy(), rel=1e-12)

    def test_matches_bin_by_bin_sum(self, rng):
        op = make_sobolev(1.5, 8, 8)
        f, g = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
        fc, gc = dct2(f), dct2(g)
        brute = sum(
            (1 + kx * kx + ky * ky) ** 1.5 * fc[kx, ky] * gc[kx, ky] for kx in range(8) for ky in range(8)
        )
        assert sobolev_inner(op, f, g) == pytest.approx(brute, abs=1e-10)

    def test_equals_precision_inner_product(self, rng):
        op = make_sobolev(1.5, 8, 8)
        f, g = Field2D(rng.standard_normal((8, 8))), Field2D(rng.standard_normal((8, 8)))
        assert sobolev_inner(op, f, g) == pytest.approx(f.inner(apply_sigma_inv(op, g)), rel=1e-9)

    def test_zero_field_norm(self):
        assert sobolev_norm_sq(make_sobolev(1.5, 4, 4), Field2D.zeros(4, 4)) == 0.0

    def test_dc_mode_norm_is_order_independent(self):
        f = single_mode((8, 8), 0, 0, 2.0)
        for s in (0.0, 1.0, 3.0):
            assert sobolev_norm_sq(make_sobolev(s, 8, 8), f) == pytest.approx(4.0, rel=1e-12)

    def test_single_mode_norm(self):
        f = single_mode((8, 8), 1, 1)
        assert sobolev_norm_sq(make_sobolev(1.5, 8, 8), f) == pytest.approx(5.196152, abs=1e-6)

    def test_norm_bounds_and_monotone_in_order(self, rng):
        f = Field2D(rng.standard_normal((8, 8)))
        norms = [sobolev_norm_sq(make_sobolev(s, 8, 8), f) for s in (0.0, 0.5, 1.5, 3.0)]
        assert norms[0] == pytest.approx(f.energy(), rel=1e-12)
        assert all(b >= a for a, b in zip(norms, norms[1:]))


class TestField2D:
    def test_arithmetic(self):
        a = Field2D(np.ones((2, 3)))
        b = Field2D(np.full((2, 3), 2.0))
        assert np.array_equal((a + b).values, np.full((2, 3), 3.0))
        assert np.array_equal((b - a).values, np.ones((2, 3)))
        assert np.array_equal((2 * a).values, np.full((2, 3), 2.0))
        assert np.array_equal((-a).values, -np.ones((2, 3)))
        assert np.array_equal((b / 2).values, np.ones((2, 3)))

    def test_values_are_read_only(self):
        f = Field2D(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            f.values[0, 0] = 1.0

    @pytest.mark.parametrize("values", [np.zeros(4), np.zeros((0, 3)), np.array([[np.inf]])])
    def test_invalid_values_rejected(self, values):
        with pytest.raises(ValidationError):
            Field2D(values)
