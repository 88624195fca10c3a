"""Tests for operator assembly, the heat and Poisson semigroups and semigroup fields."""

from __future__ import annotations

import math

import numpy as np
import pytest

from squarefield import elliptic
from squarefield.corpus import corpus_function, gaussian_bump
from squarefield.elliptic import (
    DescriptorKind,
    EllipticityError,
    FieldDescriptor,
    SemigroupField,
    assemble,
    build_field,
    caccioppoli_check,
    centered_gradient,
    coefficient_preset,
    face_gradient,
    heat,
    heat_many,
    offdiag_decay,
    operator_preset,
    poisson,
    poisson_many,
    set_distance,
    settle_time,
    subordination_rule,
)
from squarefield.halfspace import SpatialFunction, make_grid, sample_function, write_spatial
from squarefield.squarefns import V, V_PARABOLIC, apply_squarefn, lp_norm


@pytest.fixture(scope="module")
def grid():
    return make_grid(1, 8.0, 64, 0.01, 8.0, 32)


@pytest.fixture(scope="module")
def laplacian(grid):
    return operator_preset("identity", grid)


def _cosine(grid, k=1):
    return sample_function(lambda x: np.cos(2 * np.pi * k * x[0] / grid.ell), grid)


def _symbol(grid, k=1):
    """Eigenvalue of the periodic second difference on the k-th Fourier mode."""
    return (2 - 2 * math.cos(2 * math.pi * k / grid.nx)) / grid.h**2


class TestAssembly:
    def test_laplacian_eigenvalue(self, grid, laplacian):
        f = _cosine(grid, 3)
        np.testing.assert_allclose(
            laplacian.apply(f.values), _symbol(grid, 3) * f.values, atol=1e-10
        )

    def test_annihilates_constants(self, laplacian):
        np.testing.assert_allclose(laplacian.apply(np.ones(64)), 0.0, atol=1e-10)

    @pytest.mark.parametrize("name", ["identity", "smooth-scalar", "checkerboard"])
    def test_real_presets_are_hermitian(self, grid, name):
        op = operator_preset(name, grid)
        assert op.is_real
        assert op.is_hermitian
        assert op.spectral

    def test_complex_perturbed(self, grid):
        op = operator_preset("complex-perturbed", grid)
        assert not op.is_real
        assert not op.is_hermitian
        assert not op.spectral
        assert op.upper == pytest.approx(1.1)
        assert op.coefficient_bound <= op.upper

    def test_complex_perturbed_2d(self):
        g = make_grid(2, 8.0, 16, 0.1, 1.0, 4)
        op = operator_preset("complex-perturbed", g)
        assert op.coefficients.shape == (2, 2, 16, 16)
        np.testing.assert_allclose(op.apply(np.ones(g.shape)), 0.0, atol=1e-10)

    def test_preset_bounds(self, grid):
        _, lower, upper = coefficient_preset("checkerboard", grid)
        assert (lower, upper) == (1.0, 3.0)

    def test_coefficient_bound(self, grid):
        op = operator_preset("smooth-scalar", grid)
        assert op.coefficient_bound == pytest.approx(3.0, rel=1e-2)

    def test_scalar_closure_means_multiple_of_identity(self, grid):
        op = assemble(lambda x: 2.0, 1.0, 2.0, grid)
        np.testing.assert_allclose(op.coefficients[0, 0], 2.0)

    def test_rejects_lower_bound_violation(self, grid):
        with pytest.raises(EllipticityError, match="lambda"):
            assemble(lambda x: 0.5, 1.0, 2.0, grid)

    def test_rejects_upper_bound_violation(self, grid):
        with pytest.raises(EllipticityError, match="Lambda"):
            assemble(lambda x: 3.0, 1.0, 2.0, grid)

    @pytest.mark.parametrize("lower, upper", [(0.0, 1.0), (-1.0, 1.0), (2.0, 1.0)])
    def test_rejects_bad_constants(self, grid, lower, upper):
        with pytest.raises(EllipticityError):
            assemble(lambda x: 1.0, lower, upper, grid)

    def test_rejects_non_finite_coefficients(self, grid):
        with pytest.raises(EllipticityError, match="finite"):
            assemble(lambda x: np.where(x[0] > 0, np.inf, 1.0), 1.0, 2.0, grid)

    def test_unknown_preset(self, grid):
        with pytest.raises(EllipticityError, match="Unknown operator preset"):
            operator_preset("granite", grid)

    def test_file_preset(self, grid, tmp_path):
        values = 1.5 + 0.5 * np.cos(2 * np.pi * grid.axis / grid.ell)
        path = tmp_path / "a.sqs"
        write_spatial(path, grid, values)
        op = operator_preset(f"file:{path}", grid)
        assert op.lower == pytest.approx(values.min())
        assert op.upper == pytest.approx(values.max())

    def test_file_preset_grid_mismatch(self, grid, tmp_path):
        other = make_grid(1, 8.0, 32, 0.1, 1.0, 4)
        path = tmp_path / "a.sqs"
        write_spatial(path, other, np.ones(32))
        with pytest.raises(EllipticityError, match="does not match"):
            operator_preset(f"file:{path}", grid)

    def test_ellipticity_error_is_value_error(self):
        assert issubclass(EllipticityError, ValueError)


class TestGradients:
    def test_face_gradient_reproduces_energy(self, grid, laplacian):
        f = corpus_function(grid, 0, 0)
        energy = float(np.sum(face_gradient(f.values, grid) ** 2))
        assert energy == pytest.approx(float(f.values @ laplacian.apply(f.values)))

    def test_centered_gradient_of_linear_mode(self, grid):
        f = _cosine(grid)
        expected = -np.sin(2 * np.pi / grid.nx) / grid.h * np.sin(2 * np.pi * grid.axis / grid.ell)
        np.testing.assert_allclose(centered_gradient(f.values, grid)[0], expected, atol=1e-12)

    def test_gradients_act_on_trailing_axes(self, grid):
        stack = np.stack([_cosine(grid).values] * 3)
        assert centered_gradient(stack, grid).shape == (1, 3, 64)


class TestHeat:
    def test_cosine_mode_decays(self, grid, laplacian):
        f = _cosine(grid)
        np.testing.assert_allclose(
            heat(laplacian, f, 0.7).values, math.exp(-0.7 * _symbol(grid)) * f.values, atol=1e-9
        )

    @pytest.mark.parametrize("name", ["identity", "smooth-scalar", "checkerboard"])
    @pytest.mark.parametrize("s, t", [(0.1, 0.2), (0.5, 0.5), (1.0, 2.0)])
    def test_semigroup_law(self, grid, name, s, t):
        op = operator_preset(name, grid)
        f = corpus_function(grid, 1, 0)
        twice = heat(op, heat(op, f, s), t)
        np.testing.assert_allclose(
            twice.values, heat(op, f, s + t).values, atol=1e-6 * np.abs(f.values).max()
        )

    def test_constants_are_invariant(self, grid, laplacian):
        out = heat_many(laplacian, np.full(64, 2.0), [0.1, 5.0])
        np.testing.assert_allclose(out, 2.0)

    def test_mass_and_contraction(self, grid):
        op = operator_preset("checkerboard", grid)
        f = corpus_function(grid, 2, 0)
        out = heat_many(op, f, [0.05, 0.5, 5.0])
        np.testing.assert_allclose(
            out.sum(axis=1), f.values.sum(), atol=1e-9 * np.abs(f.values).sum()
        )
        norms = np.sqrt((out**2).sum(axis=1))
        assert np.all(np.diff(norms) <= 1e-12)
        assert norms[0] <= np.sqrt((f.values**2).sum())

    def test_real_input_stays_real(self, grid, laplacian):
        assert not np.iscomplexobj(heat_many(laplacian, corpus_function(grid, 0, 0), [1.0]))

    def test_crank_nicolson_matches_spectral(self, grid, monkeypatch):
        f = corpus_function(grid, 4, 0)
        times = [0.3, 0.05, 2.0]
        spectral = heat_many(operator_preset("smooth-scalar", grid), f, times)
        monkeypatch.setattr(elliptic, "SPECTRAL_MAX_SIZE", 0)
        op = operator_preset("smooth-scalar", grid)
        assert not op.spectral
        marched = heat_many(op, f, times)
        np.testing.assert_allclose(marched, spectral, atol=1e-3 * np.abs(f.values).max())

    def test_complex_semigroup_contracts(self, grid):
        op = operator_preset("complex-perturbed", grid)
        f = corpus_function(grid, 5, 0)
        out = heat_many(op, f, [0.1, 1.0])
        assert np.iscomplexobj(out)
        assert np.sqrt((np.abs(out[1]) ** 2).sum()) <= np.sqrt((f.values**2).sum())

    @pytest.mark.parametrize("times", [[0.0], [-1.0], [math.nan]])
    def test_rejects_times(self, laplacian, times):
        with pytest.raises(ValueError, match="positive and finite"):
            heat_many(laplacian, np.ones(64), times)

    def test_rejects_other_lattice(self, laplacian):
        other = make_grid(1, 8.0, 32, 0.1, 1.0, 4)
        with pytest.raises(ValueError, match="different spatial lattices"):
            heat(laplacian, SpatialFunction(other, np.ones(32)), 1.0)


class TestPoisson:
    def test_rule_is_normalized(self):
        s, w = subordination_rule()
        assert len(s) == elliptic.POISSON_NODES
        assert w.sum() == pytest.approx(1.0)
        assert np.all(s > 0)
        # evenly spaced in log s over [e^-20, e^3]
        np.testing.assert_allclose(np.diff(np.log(s)), 23 / 31)

    def test_rule_needs_enough_nodes(self):
        with pytest.raises(ValueError, match="at least 16"):
            subordination_rule(8)

    def test_unknown_rule(self):
        with pytest.raises(ValueError, match="Unknown subordination rule"):
            subordination_rule(32, "simpson")

    @pytest.mark.parametrize("k", [1, 2, 4, 8])
    @pytest.mark.parametrize("t", [0.05, 0.2, 1.0, 5.0])
    def test_cosine_mode(self, grid, laplacian, k, t):
        f = _cosine(grid, k)
        expected = math.exp(-t * math.sqrt(_symbol(grid, k))) * f.values
        np.testing.assert_allclose(poisson(laplacian, f, t).values, expected, atol=1e-3)

    def test_log_rule_resolves_small_times(self, grid):
        # t^2 mu / 4 near zero is where e^{-t sqrt(mu)} has its square-root kink
        a = 0.05**2 * _symbol(grid, 2) / 4
        exact = math.exp(-2 * math.sqrt(a))
        log_nodes, log_weights = subordination_rule(32)
        lag_nodes, lag_weights = subordination_rule(32, "laguerre")
        assert abs(np.exp(-a / log_nodes) @ log_weights - exact) < 1e-3
        assert abs(np.exp(-a / lag_nodes) @ lag_weights - exact) > 1e-2

    @pytest.mark.parametrize("s, t", [(0.1, 0.2), (0.5, 0.5), (1.0, 2.0)])
    @pytest.mark.parametrize("k", [1, 2, 4])
    def test_semigroup_law(self, grid, laplacian, s, t, k):
        f = _cosine(grid, k)
        twice = poisson(laplacian, poisson(laplacian, f, s), t)
        np.testing.assert_allclose(twice.values, poisson(laplacian, f, s + t).values, atol=1e-3)

    def test_semigroup_law_for_variable_coefficients(self, grid):
        op = operator_preset("smooth-scalar", grid)
        f = corpus_function(grid, 7, 0)
        twice = poisson(op, poisson(op, f, 0.3), 0.6)
        np.testing.assert_allclose(
            twice.values, poisson(op, f, 0.9).values, atol=1e-3 * np.abs(f.values).max()
        )

    def test_constants_are_invariant(self, laplacian):
        np.testing.assert_allclose(poisson_many(laplacian, np.full(64, 3.0), [0.5, 4.0]), 3.0)

    def test_crank_nicolson_matches_spectral(self, grid, monkeypatch):
        f = corpus_function(grid, 6, 0)
        spectral = poisson_many(operator_preset("identity", grid), f, [0.5, 1.5])
        monkeypatch.setattr(elliptic, "SPECTRAL_MAX_SIZE", 0)
        marched = poisson_many(operator_preset("identity", grid), f, [0.5, 1.5])
        np.testing.assert_allclose(marched, spectral, atol=1e-3 * np.abs(f.values).max())


class TestSettleTime:
    def test_laplacian(self, grid, laplacian):
        mu_1 = _symbol(grid, 1)
        expected = elliptic.SETTLE_DECADES * math.log(10) / mu_1
        assert settle_time(laplacian) == pytest.approx(expected)

    def test_scales_with_lower_bound(self, grid, laplacian):
        op = operator_preset("smooth-scalar", grid)
        assert settle_time(op) == pytest.approx(settle_time(laplacian) / op.lower)

    def test_march_stops_at_the_horizon(self, grid, monkeypatch):
        monkeypatch.setattr(elliptic, "SPECTRAL_MAX_SIZE", 0)
        op = operator_preset("identity", grid)
        f = corpus_function(grid, 3, 0)
        far = heat_many(op, f, [1e9])[0]
        np.testing.assert_allclose(far, f.values.mean(), atol=1e-12 * np.abs(f.values).max())


class TestDescriptors:
    def test_parse(self):
        d = FieldDescriptor.parse("m_poisson_full(1)")
        assert d.kind is DescriptorKind.M_POISSON_FULL
        assert d.m == 1
        assert str(d) == "m_poisson_full(1)"
        assert str(FieldDescriptor.parse("grad_heat")) == "grad_heat"

    @pytest.mark.parametrize("text", ["bogus", "m_gap(x)", "m_gap(-1)", "grad_heat(1)"])
    def test_parse_rejects(self, text):
        with pytest.raises(ValueError):
            FieldDescriptor.parse(text)

    @pytest.mark.parametrize(
        "text, n, channels",
        [
            ("grad_heat", 1, 1),
            ("grad_heat", 2, 2),
            ("grad_poisson_full", 2, 3),
            ("m_heat_full(1)", 1, 2),
            ("m_heat_scalar(2)", 2, 1),
            ("m_gap(0)", 1, 1),
        ],
    )
    def test_channels(self, text, n, channels):
        assert FieldDescriptor.parse(text).channels(n) == channels

    def test_semigroup_field_checks_channels(self, grid):
        with pytest.raises(ValueError, match="channels"):
            SemigroupField(
                grid, np.zeros((2, grid.nt, 64)), FieldDescriptor(DescriptorKind.GRAD_HEAT)
            )


class TestBuildField:
    def test_heat_gradient_identity(self):
        g = make_grid(1, 8.0, 128, 1e-4, 40.0, 128)
        op = operator_preset("identity", g)
        f = gaussian_bump(g, 0.5).mean_free()
        field = build_field(op, f, "grad_heat", difference="face")
        g_h = lp_norm(apply_squarefn(V_PARABOLIC, field), 2) ** 2
        assert g_h == pytest.approx(0.5 * f.l2_norm() ** 2, rel=0.01)

    def test_poisson_gradient_identity(self):
        g = make_grid(1, 8.0, 128, 1e-4, 40.0, 128)
        op = operator_preset("identity", g)
        f = gaussian_bump(g, 0.5).mean_free()
        field = build_field(op, f, "grad_poisson_full", difference="face")
        g_p = lp_norm(apply_squarefn(V, field), 2) ** 2
        assert g_p == pytest.approx(0.5 * f.l2_norm() ** 2, rel=0.03)

    def test_m_poisson_at_zero_is_the_poisson_gradient(self, grid, laplacian):
        f = corpus_function(grid, 3, 0)
        plain = build_field(laplacian, f, "grad_poisson_full")
        powered = build_field(laplacian, f, "m_poisson_full(0)")
        np.testing.assert_array_equal(powered.values, plain.values)

    def test_constant_function_gives_zero_field(self, grid, laplacian):
        f = SpatialFunction(grid, np.full(64, 4.0))
        for text in ("grad_heat", "grad_poisson_full", "m_heat_full(1)", "m_gap(1)"):
            field = build_field(laplacian, f, text)
            np.testing.assert_allclose(field.values, 0.0, atol=1e-9)

    def test_shapes_and_tags(self, grid, laplacian):
        f = corpus_function(grid, 0, 0)
        field = build_field(laplacian, f, FieldDescriptor(DescriptorKind.M_POISSON_FULL, 1))
        assert field.values.shape == (2, grid.nt, 64)
        assert field.descriptor.m == 1

    def test_other_time_grid(self, laplacian):
        times = make_grid(1, 8.0, 64, 0.1, 2.0, 8)
        field = build_field(laplacian, corpus_function(times, 0, 0), "m_heat_scalar(0)", times)
        assert field.values.shape == (1, 8, 64)

    def test_rejects_mismatched_grid(self, laplacian):
        other = make_grid(1, 8.0, 32, 0.1, 1.0, 4)
        with pytest.raises(ValueError, match="spatial lattice"):
            build_field(laplacian, SpatialFunction(other, np.ones(32)), "grad_heat")

    def test_rejects_difference_scheme(self, grid, laplacian):
        with pytest.raises(ValueError, match="difference scheme"):
            build_field(laplacian, corpus_function(grid, 0, 0), "grad_heat", difference="upwind")


@pytest.fixture(scope="module")
def offdiag_grid():
    return make_grid(1, 16.0, 1024, 0.01, 1.0, 16)


class TestOffDiagonal:
    def test_set_distance(self, offdiag_grid):
        x = offdiag_grid.coordinates()[0]
        E = (x >= -1) & (x <= 0)
        F = (x >= 2) & (x <= 6)
        assert set_distance(offdiag_grid, E, F) == pytest.approx(2.0)

    def test_gaussian_exponent_for_laplacian(self, offdiag_grid):
        op = operator_preset("identity", offdiag_grid)
        x = offdiag_grid.coordinates()[0]
        record = offdiag_decay(op, (x >= -1) & (x <= 0), (x >= 2) & (x <= 6))
        assert len(record.times) == 8
        assert max(record.amplitudes) <= 1.0
        assert record.slope == pytest.approx(-0.25, rel=0.2)

    def test_rejects_overlapping_sets(self, grid, laplacian):
        x = grid.coordinates()[0]
        with pytest.raises(ValueError, match="disjoint"):
            offdiag_decay(laplacian, x <= 0, x >= -1)

    def test_rejects_empty_set(self, grid, laplacian):
        x = grid.coordinates()[0]
        with pytest.raises(ValueError, match="nonempty"):
            offdiag_decay(laplacian, x > 100, x <= 0)

    def test_explicit_times(self, grid, laplacian):
        x = grid.coordinates()[0]
        record = offdiag_decay(laplacian, x <= -2, x >= 1, t_list=[0.1, 0.2])
        assert record.times == (0.1, 0.2)
        assert record.slope is not None


class TestCaccioppoli:
    @pytest.fixture(scope="class")
    def cacc_grid(self):
        return make_grid(1, 8.0, 128, 0.01, 16.0, 64)

    @pytest.mark.parametrize("m", [0, 1])
    def test_ratios_are_finite(self, cacc_grid, m):
        op = operator_preset("identity", cacc_grid)
        f = corpus_function(cacc_grid, 0, 0)
        records = caccioppoli_check(op, f, m, [-1.0, 0.0, 1.0])
        assert len(records) == 3
        for record in records:
            assert record.ratio is not None and math.isfinite(record.ratio)
            assert record.lhs >= 0
            assert (record.heat_scalar_term == 0.0) == (m == 0)

    def test_constant_function_has_undefined_ratio(self, cacc_grid):
        op = operator_preset("identity", cacc_grid)
        f = SpatialFunction(cacc_grid, np.ones(128))
        (record,) = caccioppoli_check(op, f, 0, [0.0])
        assert record.ratio is None

    @pytest.mark.slow
    @pytest.mark.parametrize("m", [0, 1])
    def test_ratio_is_stable_under_refinement(self, cacc_grid, m):
        refined = cacc_grid.refined()
        points = [-0.5, 0.0, 0.5]
        base = caccioppoli_check(
            operator_preset("identity", cacc_grid), corpus_function(cacc_grid, 0, 1), m, points
        )
        fine = caccioppoli_check(
            operator_preset("identity", refined), corpus_function(refined, 0, 1), m, points
        )
        for coarse, sharp in zip(base, fine):
            assert sharp.ratio == pytest.approx(coarse.ratio, rel=0.3)
