"""Unit tests for the rescaled semigroup and its decay probes."""
import logging
from unittest.mock import patch

import numpy as np
import pytest
from pydantic import ValidationError

from diagnostics import lp_norm, weighted_l2m_norm
from profile_kernels import build_kernel_table, spectral_kernel_coeffs
from semigroup import (
    SemigroupParams,
    a_of_tau,
    apply_semigroup,
    apply_semigroup_gradient_commuted,
    dilate_spectrum,
    eigen_split,
    first_moments,
    lp_growth_bound,
    probe_decay_rate,
    project_P0,
    project_Q0,
)
from spectral_core import (
    SpectralField,
    band_limited_random_field,
    forward_transform,
    inverse_transform,
    make_grid,
    spectral_gradient,
)


def _rel(a: SpectralField, b: SpectralField) -> float:
    return (a - b).norm() / b.norm()


def _profile(grid, alpha, which="G"):
    return SpectralField.from_coeffs(grid, spectral_kernel_coeffs(grid, alpha, 1.0, which))


def _without_nyquist(F: SpectralField) -> SpectralField:
    return SpectralField.from_coeffs(F.grid, np.where(F.grid.nyquist_mask(), 0.0, F.coeffs))


@pytest.fixture
def grid():
    return make_grid(128, 64.0)


class TestSemigroupParams:
    """Tests for generator parameters and eigenvalues."""

    def test_eigenvalues(self):
        p = SemigroupParams(alpha=1.5, beta=1.0)
        assert p.lambda0 == pytest.approx(1 - 2 / 1.5)
        assert p.eigenvalue(1) == pytest.approx(1 - 3 / 1.5)

    def test_theta_shift(self):
        p = SemigroupParams.for_theta(1.4)
        assert p.lambda0 == pytest.approx(2 - 3 / 1.4)

    def test_validation(self):
        with pytest.raises(ValidationError):
            SemigroupParams(alpha=1.0)
        with pytest.raises(ValidationError):
            SemigroupParams(alpha=1.5, beta=2.0)

    def test_a_of_tau(self):
        assert a_of_tau(0.0) == 0.0
        assert a_of_tau(2.0) + np.exp(-2.0) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            a_of_tau(-0.1)


class TestEigenfunctions:
    """Tests for the exact propagation of G and its derivatives."""

    @pytest.mark.parametrize("alpha,beta", [(1.5, 1.0), (1.8, 0.0), (1.2, 0.5)])
    def test_profile_is_eigenfunction(self, alpha, beta):
        grid = make_grid(128, 32.0)
        p = SemigroupParams(alpha=alpha, beta=beta)
        G = _profile(grid, alpha)
        for tau in (0.3, 1.0, 2.5):
            out = apply_semigroup(G, tau, p)
            assert _rel(out, _without_nyquist(G).scaled(np.exp(p.lambda0 * tau))) <= 1e-10

    @pytest.mark.parametrize("alpha", [1.3, 1.5, 1.8])
    def test_derivative_is_eigenfunction(self, alpha):
        grid = make_grid(128, 32.0)
        p = SemigroupParams(alpha=alpha)
        dG = _profile(grid, alpha, "dG1")
        for tau in (0.5, 2.0):
            out = apply_semigroup(dG, tau, p)
            assert _rel(out, dG.scaled(np.exp(p.eigenvalue(1) * tau))) <= 1e-10

    def test_symmetric_field_has_zero_moments(self, grid):
        g = inverse_transform(_profile(grid, 1.5))
        m1, m2 = first_moments(g)
        assert abs(m1) < 1e-14 and abs(m2) < 1e-14


class TestSemigroupAction:
    """Tests for apply_semigroup on generic data."""

    def test_identity_at_zero(self, grid):
        F = forward_transform(band_limited_random_field(grid, seed=1))
        assert apply_semigroup(F, 0.0, SemigroupParams(alpha=1.5)) is F

    def test_negative_tau_rejected(self, grid):
        with pytest.raises(ValueError):
            apply_semigroup(SpectralField.zeros(grid), -1.0, SemigroupParams(alpha=1.5))

    def test_mass_law_is_exact(self, grid):
        p = SemigroupParams(alpha=1.5, beta=0.5)
        F = forward_transform(band_limited_random_field(grid, seed=4))
        out = apply_semigroup(F, 1.3, p)
        assert out.mass == pytest.approx(np.exp(p.lambda0 * 1.3) * F.mass, rel=1e-12)

    def test_dilate_spectrum_at_unit_scale(self, grid):
        F = forward_transform(band_limited_random_field(grid, seed=2))
        out = dilate_spectrum(F, 1.0, 1.5)
        expected = np.where(grid.nyquist_mask(), 0.0, F.coeffs)
        assert np.max(np.abs(out - expected)) <= 1e-12 * np.max(np.abs(F.coeffs))

    @pytest.mark.parametrize("mean_zero", [False, True])
    def test_composition(self, grid, mean_zero):
        p = SemigroupParams(alpha=1.5)
        F = forward_transform(band_limited_random_field(grid, seed=5, mean_zero=mean_zero))
        rng = np.random.default_rng(0)
        # pairs in (0, 2]
        for tau1, tau2 in 2.0 - rng.uniform(0.0, 2.0, size=(20, 2)):
            chained = apply_semigroup(apply_semigroup(F, tau1, p), tau2, p)
            direct = apply_semigroup(F, tau1 + tau2, p)
            assert _rel(chained, direct) <= 1e-5

    def test_l1_contraction(self, grid):
        # ||e^{tau L} f||_1 <= e^{lambda0 tau} ||f||_1
        p = SemigroupParams(alpha=1.5)
        f = band_limited_random_field(grid, seed=8)
        for tau in (0.5, 1.0, 2.0):
            out = inverse_transform(apply_semigroup(forward_transform(f), tau, p))
            bound = np.exp(lp_growth_bound(1, p) * tau) * lp_norm(f, 1)
            assert lp_norm(out, 1) <= bound * (1 + 1e-4)

    def test_compression_warning(self, caplog):
        grid = make_grid(16, 8.0)
        F = forward_transform(band_limited_random_field(grid, seed=1))
        with caplog.at_level(logging.WARNING, logger="semigroup"):
            apply_semigroup(F, 3.0, SemigroupParams(alpha=1.5))
        assert "compressed" in caplog.text


class TestGradientCommutation:
    """Tests for grad e^{tau L} = e^{tau/alpha} e^{tau L} grad."""

    @pytest.mark.parametrize("mean_zero", [False, True])
    def test_random_data(self, grid, mean_zero):
        p = SemigroupParams(alpha=1.5)
        F = forward_transform(band_limited_random_field(grid, seed=6, mean_zero=mean_zero))
        for axis in (0, 1):
            result = apply_semigroup_gradient_commuted(F, 1.0, p, axis)
            assert result.discrepancy <= 1e-6

    def test_large_box(self):
        p = SemigroupParams(alpha=1.5)
        F = forward_transform(band_limited_random_field(make_grid(256, 64.0), seed=11))
        result = apply_semigroup_gradient_commuted(F, 1.0, p, 0)
        assert result.discrepancy <= 1e-6

    def test_evolved_data_with_tail(self, grid):
        # e^{L} f carries the G tail; what is left to interpolation decays like r^(-2-2 alpha)
        p = SemigroupParams(alpha=1.5)
        F = apply_semigroup(forward_transform(band_limited_random_field(grid, seed=7)), 1.0, p)
        assert eigen_split(F, 1.5).tail_share > 0.1
        result = apply_semigroup_gradient_commuted(F, 1.0, p, 1)
        assert result.discrepancy <= 1e-4

    def test_profile(self, grid):
        p = SemigroupParams(alpha=1.8)
        tau = 1.0
        result = apply_semigroup_gradient_commuted(_profile(grid, 1.8), tau, p, 0)
        assert result.discrepancy <= 1e-10
        # d1 e^{tau L} G = e^{lambda0 tau} d1 G
        expected = _profile(grid, 1.8, "dG1").scaled(np.exp(p.lambda0 * tau))
        assert _rel(result.field, _without_nyquist(expected)) <= 1e-10

    def test_field_is_gradient_of_propagated_data(self, grid):
        p = SemigroupParams(alpha=1.5)
        F = forward_transform(band_limited_random_field(grid, seed=9))
        result = apply_semigroup_gradient_commuted(F, 0.5, p, 1)
        direct = spectral_gradient(apply_semigroup(F, 0.5, p), 1)
        assert np.array_equal(result.field.coeffs, direct.coeffs)


class TestEigenSplit:
    """Tests for splitting off the closed-form part."""

    def test_localized_data_are_not_split(self, grid):
        F = forward_transform(band_limited_random_field(grid, seed=1))
        split = eigen_split(F, 1.5)
        assert split.tail_share <= 1e-3
        assert _rel(split.remainder, F) <= 1e-3

    def test_profile_is_all_closed_form(self, grid):
        split = eigen_split(_profile(grid, 1.5), 1.5)
        assert split.tail_share == pytest.approx(1.0, abs=1e-12)
        assert split.weights[0] == pytest.approx(1.0, abs=1e-12)
        assert split.remainder.norm() <= 1e-12 * _profile(grid, 1.5).norm()

    def test_derivative_weights(self, grid):
        split = eigen_split(_profile(grid, 1.5, "dG1").scaled(2.0), 1.5)
        mass, c1, c2 = split.weights
        assert c1 == pytest.approx(2.0, rel=1e-10)
        assert abs(mass) <= 1e-12 and abs(c2) <= 1e-12

    def test_zero_field(self, grid):
        split = eigen_split(SpectralField.zeros(grid), 1.5)
        assert split.tail_share == 0.0
        assert split.weights == (0.0, 0.0, 0.0)


class TestProjections:
    """Tests for P0 and Q0."""

    def test_q0_removes_mass(self, grid):
        kt = build_kernel_table(1.5)
        f = band_limited_random_field(grid, seed=3)
        q = project_Q0(f, kt)
        assert abs(forward_transform(q).mass) <= 1e-12 * lp_norm(f, 1)

    def test_p0_is_idempotent(self, grid):
        kt = build_kernel_table(1.5)
        f = band_limited_random_field(grid, seed=3)
        once = project_P0(f, kt)
        twice = project_P0(once, kt)
        assert np.max(np.abs(twice.values - once.values)) <= 1e-10 * np.max(np.abs(once.values))


class TestGrowthBounds:
    """Tests for the predicted L^p exponents."""

    def test_l1_bound_is_mass_rate(self):
        p = SemigroupParams(alpha=1.5, beta=0.5)
        assert lp_growth_bound(1, p) == pytest.approx(p.lambda0)

    def test_gradient_bound(self):
        p = SemigroupParams(alpha=1.5)
        assert lp_growth_bound(2, p, derivative=True) == pytest.approx(lp_growth_bound(2, p) - 1 / 1.5)

    def test_sup_bound(self):
        p = SemigroupParams(alpha=1.5, beta=1.0)
        assert lp_growth_bound(np.inf, p) == pytest.approx(1.0)


class TestDecayProbe:
    """Tests for the ensemble decay probes."""

    def test_generic_data_decay_at_lambda0(self, grid):
        p = SemigroupParams(alpha=1.5)
        result = probe_decay_rate(p, mean_zero=False, weight="L2(2)",
                                  tau_samples=[2, 3, 4, 5, 6], grid=grid, ensemble_size=3)
        assert result.expected == pytest.approx(p.lambda0)
        assert abs(result.slope - result.expected) <= 0.05

    def test_mean_zero_data_decay_faster(self, grid):
        p = SemigroupParams(alpha=1.5)
        result = probe_decay_rate(p, mean_zero=True, weight="L2(2)",
                                  tau_samples=[2, 3, 4, 5, 6], grid=grid, ensemble_size=3)
        assert result.expected == pytest.approx(p.eigenvalue(1))
        assert result.slope <= result.expected + 0.05

    def test_rejects_unknown_weight(self, grid):
        with pytest.raises(ValueError):
            probe_decay_rate(SemigroupParams(alpha=1.5), mean_zero=False, weight="L1",
                             tau_samples=[1, 2, 3, 6], grid=grid)

    def test_weighted_norm_comes_from_diagnostics(self, grid):
        p = SemigroupParams(alpha=1.5)
        with patch("semigroup.weighted_l2m_norm", wraps=weighted_l2m_norm) as norm:
            probe_decay_rate(p, mean_zero=False, weight="L2(2)",
                             tau_samples=[1, 2, 6], grid=grid, ensemble_size=1)
        assert norm.call_count == 3
        assert {call.args[1] for call in norm.call_args_list} == {2}
