"""Tests for the lower and upper counterexample families and the ratio scans."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from squarefield.counterexamples import (
    Family,
    FamilyError,
    FamilySpec,
    build_family,
    family_grid,
    fit_slope,
    ratio_scan,
)
from squarefield.halfspace import make_grid
from squarefield.services.runner import RowRunner
from squarefield.squarefns import V_TILDE, apply_squarefn


class TestFamilyGrid:
    def test_lower_grid(self):
        grid = family_grid("lower", 16)
        assert (grid.ell, grid.nx, grid.nt) == (64.0, 512, 72)
        assert grid.h == pytest.approx(0.125)
        assert grid.t_max == 32.0
        assert grid.t_min == pytest.approx(0.0625)

    def test_upper_grid(self):
        grid = family_grid(Family.UPPER, 4)
        assert (grid.ell, grid.nx, grid.nt) == (8.0, 256, 56)
        assert grid.t_min == pytest.approx(2 / 128)
        assert grid.t_max == 2.0

    def test_two_dimensional(self):
        assert family_grid("upper", 2, n=2).n == 2

    def test_rejects_scale(self):
        with pytest.raises(FamilyError, match="positive"):
            family_grid("upper", 0)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            family_grid("sideways", 4)


class TestExpectedSlope:
    def test_lower(self):
        assert Family.LOWER.expected_slope(1, 0.5) == pytest.approx(0.5)
        assert Family.LOWER.expected_slope(2, 0.5) == pytest.approx(1.0)

    def test_upper(self):
        assert Family.UPPER.expected_slope(1, 2.0) == pytest.approx(-1.0)
        assert Family.UPPER.expected_slope(2, 1.5) == pytest.approx(-1.0)


class TestFamilySpec:
    def test_lower_needs_large_scale(self):
        with pytest.raises(FamilyError, match="N > 8"):
            FamilySpec.create("lower", 8)

    def test_lower_needs_time_range(self):
        grid = make_grid(1, 64.0, 512, 0.1, 10.0, 16)
        with pytest.raises(FamilyError, match="t_max"):
            FamilySpec(Family.LOWER, 16, grid)

    def test_lower_needs_extent(self):
        grid = make_grid(1, 4.0, 64, 0.1, 32.0, 16)
        with pytest.raises(FamilyError, match="spatial extent"):
            FamilySpec(Family.LOWER, 16, grid)

    def test_upper_needs_resolution(self):
        grid = make_grid(1, 8.0, 64, 0.01, 2.0, 16)
        with pytest.raises(FamilyError, match="h = "):
            FamilySpec(Family.UPPER, 8, grid)

    def test_upper_needs_unit_time(self):
        grid = make_grid(1, 8.0, 256, 0.01, 0.5, 16)
        with pytest.raises(FamilyError, match="must reach 1"):
            FamilySpec(Family.UPPER, 4, grid)

    def test_family_is_coerced(self):
        grid = family_grid("upper", 4)
        assert FamilySpec("upper", 4, grid).family is Family.UPPER

    @settings(max_examples=15, deadline=None)
    @given(family=st.sampled_from(["lower", "upper"]), exponent=st.integers(0, 3))
    def test_created_specs_are_valid(self, family, exponent):
        N = (16 if family == "lower" else 2) * 2**exponent
        spec = FamilySpec.create(family, N)
        assert spec.grid.h <= (0.125 if family == "lower" else 1 / (2 * N))
        assert spec.grid.t_min < spec.grid.h


class TestBuildFamily:
    def test_lower_vertical_is_indicator(self):
        spec = FamilySpec.create("lower", 16)
        vertical = apply_squarefn(V_TILDE, build_family(spec)).values
        inside = np.abs(spec.grid.axis) < 1.0
        np.testing.assert_allclose(vertical[inside], 1.0, rtol=1e-12)
        np.testing.assert_array_equal(vertical[~inside], 0.0)

    def test_lower_indicator_ball_is_open(self):
        spec = FamilySpec.create("lower", 16)
        field = build_family(spec)
        axis = spec.grid.axis
        on_sphere = np.isin(axis, [-1.0, 1.0])
        assert on_sphere.sum() == 2
        assert not field.values[0][:, on_sphere].any()
        # 15 cells of width 1/8 strictly inside (-1, 1)
        support = field.values[0].any(axis=0)
        assert support.sum() * spec.grid.h == pytest.approx(1.875)

    def test_upper_support(self):
        spec = FamilySpec.create("upper", 4)
        field = build_family(spec)
        support = np.nonzero(field.values[0].any(axis=0))[0]
        assert np.all(np.abs(spec.grid.axis[support]) < 0.25)
        assert field.values[0][spec.grid.times > 1.0].max() == 0.0

    def test_upper_profile(self):
        spec = FamilySpec.create("upper", 4)
        grid = spec.grid
        field = build_family(spec)
        k = int(np.searchsorted(grid.times, 0.5))
        t = grid.times[k]
        assert field.values[0, k, grid.nx // 2] == pytest.approx(2.0 * t * t)


class TestFitSlope:
    def test_exact_power_law(self):
        scales = [2.0, 4.0, 8.0, 16.0]
        assert fit_slope(scales, [s**-1.5 for s in scales]) == pytest.approx(-1.5)

    def test_drops_smallest_scale(self):
        # the outlier at the smallest N is ignored from three points up
        assert fit_slope([1, 2, 4], [100.0, 2.0, 4.0]) == pytest.approx(1.0)

    def test_two_points_are_kept(self):
        assert fit_slope([1, 2], [1.0, 4.0]) == pytest.approx(2.0)

    def test_single_point(self):
        assert fit_slope([4], [1.0]) is None

    def test_order_does_not_matter(self):
        assert fit_slope([8, 2, 4], [8.0, 2.0, 4.0]) == pytest.approx(1.0)


class TestRatioScan:
    @pytest.mark.slow
    def test_lower_ratio_grows(self):
        record = ratio_scan("lower", 0.5, [16, 32, 64])
        assert all(b > a for a, b in zip(record.ratios, record.ratios[1:]))
        assert record.expected_slope == pytest.approx(0.5)
        assert abs(record.slope - 0.5) <= 0.15

    def test_upper_ratio_decays(self):
        record = ratio_scan(Family.UPPER, 2.0, [4, 8, 16])
        assert all(b < a for a, b in zip(record.ratios, record.ratios[1:]))
        assert record.slope == pytest.approx(-1.0, abs=0.2)

    def test_rows_follow_input_order_with_workers(self):
        with RowRunner(3) as runner:
            threaded = ratio_scan("upper", 2.0, [4, 8, 16], runner=runner)
        inline = ratio_scan("upper", 2.0, [4, 8, 16])
        assert [row.N for row in threaded.rows] == [4.0, 8.0, 16.0]
        assert threaded.ratios == inline.ratios

    def test_single_scale_has_no_slope(self, caplog):
        record = ratio_scan("upper", 2.0, [4])
        assert record.slope is None
        assert "Slope undefined" in caplog.text

    @pytest.mark.parametrize("family, p", [("lower", 1.0), ("lower", 2.0), ("upper", 1.0)])
    def test_rejects_exponent(self, family, p):
        with pytest.raises(FamilyError):
            ratio_scan(family, p, [16])

    def test_rejects_empty_scales(self):
        with pytest.raises(FamilyError, match="empty"):
            ratio_scan("upper", 2.0, [])

    def test_row_values(self):
        (row,) = ratio_scan("upper", 2.0, [4]).rows
        assert row.family == "upper"
        assert row.n == 1
        assert row.ratio == pytest.approx(row.norm_s_tilde / row.norm_v_tilde)
        assert math.isfinite(row.ratio)
