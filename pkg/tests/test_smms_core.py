"""Tests for SMMS backgrounds, weighted curvatures and conformal operators."""
import numpy as np
import pytest

from smms_lab.exceptions import InvalidInputError, PositivityError
from smms_lab.services import domain_grid, smms_core


def _law_discrepancy(kind: str, count: int, modes: np.ndarray):
    """Max interior R and boundary H gaps between the transformation law and direct evaluation.

    ``w = 1 + 0.3 sum_j a_j cos((j - 1/2) pi x) / sum_j |a_j|`` stays in ``[0.7, 1.3]``, is even
    in r and has a nonzero normal derivative at ``x = 1``.
    """
    if kind == "interval":
        domain = domain_grid.build_interval_domain(count, 1.0, dim_n=3, dim_m=1.0)
        x = domain.coordinate("x")
        phi0 = 0.5 * x
    else:
        domain = domain_grid.build_radial_ball_domain(count, dim_n=3, dim_m=1.0)
        x = domain.coordinate("r")
        phi0 = 0.4 * x**2
    waves = sum(a * np.cos((j - 0.5) * np.pi * x) for j, a in enumerate(modes, start=1))
    w = 1.0 + 0.3 * waves / np.sum(np.abs(modes))
    bg = smms_core.make_background(domain, phi0=phi0)

    r_law, h_law, _, _ = smms_core.conformal_transform(bg, w)
    direct = smms_core.transformed_background(bg, w)
    r_direct = smms_core.weighted_scalar_curvature(direct)
    h_direct = smms_core.weighted_mean_curvature(direct)
    inner = domain.interior_index
    return (
        float(np.max(np.abs(r_law - r_direct)[inner])),
        float(np.max(np.abs(h_law - h_direct))),
    )


@pytest.mark.core
@pytest.mark.unit
class TestBackground:
    """Test background validation and dimensional constants."""

    def test_dimensional_constants(self, interval_domain):
        """Test c, k and the critical exponents for n = 3, m = 1."""
        bg = smms_core.make_background(interval_domain)

        assert bg.total_dim == 4.0
        assert bg.c_coef == pytest.approx(6.0)
        assert bg.k_exp == pytest.approx(2.0)
        assert bg.q_exp == pytest.approx(3.0)
        assert bg.q_boundary_exp == pytest.approx(2.0)

    def test_flat_defaults(self, ball_domain):
        """Test that omitted curvatures default to the flat model values."""
        bg = smms_core.make_background(ball_domain)

        np.testing.assert_array_equal(bg.R_g0, 0.0)
        np.testing.assert_array_equal(bg.H_g0, 2.0)

    def test_m_zero_requires_vanishing_potential(self, ball_domain):
        """Test that m = 0 with a nonzero potential is rejected."""
        with pytest.raises(InvalidInputError):
            smms_core.make_background(ball_domain, phi0=np.full(ball_domain.node_count, 0.1))

    def test_wrong_field_length_rejected(self, interval_domain):
        """Test that fields of the wrong size are rejected."""
        with pytest.raises(InvalidInputError):
            smms_core.make_background(interval_domain, R_g0=np.zeros(3))

    def test_low_dimension_rejected(self):
        """Test that n + m <= 2 is rejected."""
        domain = domain_grid.build_interval_domain(11, 1.0, dim_n=2)

        with pytest.raises(InvalidInputError):
            smms_core.make_background(domain)

    def test_conformal_factor_positivity(self):
        """Test that nonpositive conformal factors are rejected."""
        with pytest.raises(PositivityError):
            smms_core.ConformalFactor(np.array([1.0, 0.0, 2.0]))

    def test_positive_power_is_zero_safe(self):
        """Test that positive_power maps zeros to zero without warnings."""
        values = smms_core.positive_power(np.array([0.0, 4.0]), 1.5)

        np.testing.assert_allclose(values, [0.0, 8.0])


@pytest.mark.core
@pytest.mark.unit
class TestWeightedCurvature:
    """Test weighted scalar and mean curvature."""

    def test_linear_potential_on_interval(self, interval_domain):
        """Test R^m = -(m+1)/m a^2 and H^m = H - dphi/dnu = (+a, -a) for phi0 = a x."""
        x = interval_domain.coordinate("x")
        bg = smms_core.make_background(interval_domain, phi0=x)

        np.testing.assert_allclose(smms_core.weighted_scalar_curvature(bg), -2.0, atol=1e-10)
        np.testing.assert_allclose(smms_core.weighted_mean_curvature(bg), [1.0, -1.0], atol=1e-10)

    def test_m_zero_is_riemannian(self, flat_ball):
        """Test that m = 0 returns the metric curvatures."""
        np.testing.assert_array_equal(smms_core.weighted_scalar_curvature(flat_ball), 0.0)
        np.testing.assert_array_equal(smms_core.weighted_mean_curvature(flat_ball), 2.0)

    @pytest.mark.parametrize("trial", range(20))
    @pytest.mark.parametrize("kind", ["interval", "ball"])
    def test_transformation_law_converges_at_second_order(self, kind, trial):
        """Test observed order >= 1.9 of the R and H gap over three halvings of h."""
        modes = np.random.default_rng(trial).normal(size=3)
        gaps = np.array(
            [max(_law_discrepancy(kind, count, modes)) for count in (101, 201, 401, 801)]
        )

        orders = np.log2(gaps[:-1] / gaps[1:])

        assert np.all(orders >= 1.9), orders


@pytest.mark.core
@pytest.mark.unit
class TestConformalOperators:
    """Test L, B and their barred versions."""

    def test_operators_on_constants(self, interval_domain):
        """Test that L 1 = R^m, B 1 = H^m and the barred versions scale by -1/(N-1)."""
        x = interval_domain.coordinate("x")
        bg = smms_core.make_background(interval_domain, phi0=0.5 * x, R_g0=np.cos(x))
        ones = np.ones(interval_domain.node_count)
        r = smms_core.weighted_scalar_curvature(bg)
        h = smms_core.weighted_mean_curvature(bg)

        np.testing.assert_allclose(smms_core.apply_L(bg, ones), r, atol=1e-10)
        np.testing.assert_allclose(smms_core.apply_B(bg, ones), h, atol=1e-10)
        np.testing.assert_allclose(smms_core.apply_Lbar(bg, ones), -r / 3.0, atol=1e-10)
        np.testing.assert_allclose(smms_core.apply_Bbar(bg, ones), -h / 3.0, atol=1e-10)

    def test_unit_factor_solves_system(self, solvable_background):
        """Test that w = 1 has zero Yamabe residual on any background."""
        assert smms_core.residual_norm(solvable_background, np.ones(41)) < 1e-10

    def test_conformal_transform_of_unit_factor(self, flat_ball):
        """Test that w = 1 leaves curvatures and measures unchanged."""
        ones = np.ones(flat_ball.domain.node_count)
        r_new, h_new, vol_weight, area_weight = smms_core.conformal_transform(flat_ball, ones)

        np.testing.assert_allclose(r_new, 0.0, atol=1e-12)
        np.testing.assert_allclose(h_new, 2.0)
        np.testing.assert_allclose(vol_weight, 1.0)
        np.testing.assert_allclose(area_weight, 1.0)

    def test_transformed_background_refuses_operators(self, flat_ball):
        """Test that operators demand the untransformed grid metric."""
        w = np.full(flat_ball.domain.node_count, 2.0)
        transformed = smms_core.transformed_background(flat_ball, w)

        with pytest.raises(InvalidInputError):
            smms_core.apply_L(transformed, w)

    def test_energy_matrix_of_constant(self, interval_domain):
        """Test that E(1) = int R e^{-phi} + 2 oint H e^{-phi}."""
        x = interval_domain.coordinate("x")
        bg = smms_core.make_background(interval_domain, phi0=x, R_g0=1.0 + x)
        ones = np.ones(interval_domain.node_count)
        energy = smms_core.energy_matrix(bg)
        expected = domain_grid.integrate_volume(
            interval_domain, smms_core.weighted_scalar_curvature(bg), bg.density
        ) + 2.0 * domain_grid.integrate_boundary(
            interval_domain, smms_core.weighted_mean_curvature(bg), bg.boundary_density
        )

        assert abs(energy - energy.T).max() < 1e-12
        assert float(ones @ (energy @ ones)) == pytest.approx(expected, rel=1e-12)
