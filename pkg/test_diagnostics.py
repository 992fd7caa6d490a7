#!/usr/bin/env python3
"""
Tests for LSD, PSNR, PSD slope error and residual spectrum profiles.
"""

import math

import numpy as np
import pytest

from data_models import Field2D
from diagnostics import log_spectral_distance, profile_to_csv, psd_slope_error, psnr, residual_spectrum_profile
from errors import ShapeMismatchError
from spectral_core import idct2, make_sobolev


@pytest.fixture
def field():
    return Field2D(np.random.default_rng(3).standard_normal((8, 8)))


class TestLogSpectralDistance:
    def test_identical(self, field):
        assert log_spectral_distance(field, field) == 0.0

    def test_doubled_field(self, field):
        assert log_spectral_distance(2 * field, field) == pytest.approx(10 * math.log10(4), abs=1e-9)

    def test_symmetric(self, field):
        other = Field2D(np.random.default_rng(4).standard_normal((8, 8)))
        assert log_spectral_distance(field, other) == pytest.approx(log_spectral_distance(other, field))

    def test_shape_mismatch(self, field):
        with pytest.raises(ShapeMismatchError):
            log_spectral_distance(field, Field2D.zeros(4, 4))


class TestPsnr:
    def test_identical_is_infinite(self, field):
        assert psnr(field, field) == math.inf

    def test_mse_equal_to_peak_squared(self):
        assert psnr(Field2D.zeros(4, 4), Field2D.full(4, 4, 2.0)) == pytest.approx(0.0, abs=1e-12)

    def test_constant_offset(self, field):
        shifted = Field2D(field.values + 0.1)
        assert psnr(field, shifted) == pytest.approx(26.0206, abs=1e-4)

    def test_custom_peak(self):
        assert psnr(Field2D.zeros(2, 2), Field2D.full(2, 2, 0.1), peak=1.0) == pytest.approx(20.0)


class TestSlopeError:
    def test_error_against_target_slope(self, mocker, field):
        mocker.patch("diagnostics.fit_psd_slope", return_value=-1.4)
        assert psd_slope_error([field], 1.5) == pytest.approx(0.1)

    def test_exact_slope(self, mocker, field):
        mocker.patch("diagnostics.fit_psd_slope", return_value=-1.2)
        assert psd_slope_error([field], 1.2) == pytest.approx(0.0, abs=1e-15)


class TestResidualProfile:
    def test_zero_residual(self):
        rows = residual_spectrum_profile(Field2D.zeros(8, 8), make_sobolev(1.5, 8, 8))
        assert rows
        assert all(r.l2_energy == 0.0 and r.weighted_energy == 0.0 for r in rows)

    def test_single_mode(self):
        coeffs = np.zeros((8, 8))
        coeffs[1, 1] = 1.0
        rows = residual_spectrum_profile(Field2D(idct2(coeffs)), make_sobolev(1.5, 8, 8))
        nonzero = [r for r in rows if r.l2_energy > 1e-20]
        assert [r.radius_bin for r in nonzero] == [1]
        assert nonzero[0].weighted_energy / nonzero[0].l2_energy == pytest.approx(3 ** 1.5, rel=1e-9)

    def test_order_zero_columns_match(self, field):
        for row in residual_spectrum_profile(field, make_sobolev(0.0, 8, 8)):
            assert row.l2_energy == row.weighted_energy

    def test_energy_sums_to_norms(self, field):
        rows = residual_spectrum_profile(field, make_sobolev(0.0, 8, 8))
        assert sum(r.l2_energy for r in rows) == pytest.approx(field.energy(), rel=1e-10)

    def test_csv(self):
        rows = residual_spectrum_profile(Field2D.zeros(2, 2), make_sobolev(1.0, 2, 2))
        lines = profile_to_csv(rows).splitlines()
        assert lines[0] == "radius_bin,l2_energy,weighted_energy"
        assert lines[1] == "0,0,0"
        assert len(lines) == 1 + len(rows)
