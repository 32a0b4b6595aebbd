"""Tests for the trace GNS quotient, the Escobar quotient and the Aubin-type estimate."""
from math import pi, sqrt

import numpy as np
import pytest

from smms_lab.exceptions import DivisionGuardError, InvalidDomainError, InvalidInputError
from smms_lab.services import domain_grid, smms_core, variational


@pytest.fixture
def weighted_interval(rng):
    """m = 1 interval with a random potential and curvatures."""
    domain = domain_grid.build_interval_domain(41, 1.0, dim_n=3, dim_m=1.0)
    phi0 = domain_grid.smooth_random_field(domain, rng, -0.3, 0.3)
    r_g0 = domain_grid.smooth_random_field(domain, rng, -1.0, 1.0)
    return smms_core.make_background(domain, phi0=phi0, R_g0=r_g0, H_g0=np.array([0.4, -0.2]))


def _extremal_on(domain, epsilon=1.0, m=1.0, n=3):
    r, t = domain_grid.trace_coordinates(domain)
    return variational.gns_extremal(epsilon, 0.0, m, n)(r, t)


@pytest.mark.variational
@pytest.mark.unit
class TestTraceGns:
    """Test the sharp constant and the half-space quotient."""

    def test_lambda_mn_closed_forms(self):
        """Test Lambda_{0,3} = sqrt(pi) and Lambda_{1,3} = 4 (pi / 162)^{1/3}."""
        assert variational.lambda_mn(0.0, 3) == pytest.approx(sqrt(pi), rel=1e-12)
        assert variational.lambda_mn(1.0, 3) == pytest.approx(4.0 * (pi / 162.0) ** (1.0 / 3.0))

    @pytest.mark.parametrize("m, n", [(-1.0, 3), (0.0, 2)])
    def test_lambda_mn_rejects_bad_dimensions(self, m, n):
        """Test that m < 0 or n < 3 is rejected."""
        with pytest.raises(InvalidInputError):
            variational.lambda_mn(m, n)

    def test_extremal_peaks_at_origin(self):
        """Test that the extremal peaks at (2 / eps)^{(N-2)/2} at the origin."""
        evaluate = variational.gns_extremal(2.0, 0.0, m=1.0, n=3)

        assert float(evaluate(np.array([0.0]), np.array([0.0]))[0]) == pytest.approx(1.0)
        assert float(evaluate(np.array([2.0]), np.array([0.0]))[0]) < 1.0

    def test_extremal_needs_positive_epsilon(self):
        """Test that epsilon <= 0 is rejected."""
        with pytest.raises(InvalidInputError):
            variational.gns_extremal(0.0)

    def test_quotient_is_scale_invariant(self, cylinder_domain):
        """Test that Q(2 w) = Q(w)."""
        w = _extremal_on(cylinder_domain)

        first = variational.trace_gns_quotient(cylinder_domain, w, 1.0, 3)
        second = variational.trace_gns_quotient(cylinder_domain, 2.0 * w, 1.0, 3)

        assert second == pytest.approx(first, rel=1e-12)

    def test_quotient_needs_half_space(self, ball_domain):
        """Test that the trace quotient refuses compact model domains."""
        with pytest.raises(InvalidDomainError):
            variational.trace_gns_quotient(ball_domain, np.ones(41), 0.0, 3)

    def test_tail_bound_decreases_with_extent(self):
        """Test that a larger truncation box leaves a smaller tail."""
        small = domain_grid.build_halfspace_cylinder_domain(21, 21, 5.0, 5.0, dim_n=3, dim_m=1.0)
        large = domain_grid.build_halfspace_cylinder_domain(
            41, 41, 10.0, 10.0, dim_n=3, dim_m=1.0
        )

        small_tail = variational.truncation_tail_bound(small, 1.0, 1.0, 3)
        large_tail = variational.truncation_tail_bound(large, 1.0, 1.0, 3)

        assert 0 < large_tail < small_tail

    @pytest.mark.slow
    def test_extremal_quotient_converges_to_sharp_constant(self):
        """Test that Q(w_eps) approaches Lambda_{1,3} under refinement of the cylinder."""
        sharp = variational.lambda_mn(1.0, 3)
        gaps = []
        for extent, spacing in ((10.0, 0.2), (20.0, 0.1), (40.0, 0.05)):
            count = int(round(extent / spacing)) + 1
            domain = domain_grid.build_halfspace_cylinder_domain(
                count, count, extent, extent, dim_n=3, dim_m=1.0
            )
            quotient = variational.trace_gns_quotient(domain, _extremal_on(domain), 1.0, 3)
            gaps.append(abs(quotient - sharp))

        assert gaps[2] < gaps[1] < gaps[0]
        assert gaps[2] / sharp < 0.02


@pytest.mark.variational
@pytest.mark.unit
class TestEscobarQuotient:
    """Test A, B, Q and their first variation."""

    def test_flat_ball_constant(self, flat_ball):
        """Test A = 2 pi, B = 1 / (2 sqrt(pi)) and Q = sqrt(pi) for w = 1 on the unit 3-ball."""
        ones = np.ones(41)

        report = variational.quotient_report(flat_ball, ones)

        assert report.A_value == pytest.approx(2.0 * pi, rel=1e-12)
        assert report.B_value == pytest.approx(1.0 / (2.0 * sqrt(pi)), rel=1e-12)
        assert report.Q_value == pytest.approx(sqrt(pi), rel=1e-12)
        assert report.el_interior_residual < 1e-10
        assert report.el_boundary_residual < 1e-10

    def test_constant_is_critical_on_flat_ball(self, flat_ball):
        """Test that the gradient of Q vanishes at w = 1."""
        np.testing.assert_allclose(
            variational.quotient_gradient(flat_ball, np.ones(41)), 0.0, atol=1e-10
        )

    def test_gradient_matches_finite_differences(self, weighted_interval, rng):
        """Test the analytic gradient against central differences."""
        w = domain_grid.smooth_random_field(weighted_interval.domain, rng, 0.6, 1.4)
        step = 1e-6
        numeric = np.empty_like(w)
        for index in range(w.size):
            bump = np.zeros_like(w)
            bump[index] = step
            numeric[index] = (
                variational.escobar_quotient(weighted_interval, w + bump)
                - variational.escobar_quotient(weighted_interval, w - bump)
            ) / (2.0 * step)

        analytic = variational.quotient_gradient(weighted_interval, w)

        scale = np.max(np.abs(numeric))
        assert np.max(np.abs(analytic - numeric)) <= 1e-5 * scale

    def test_normalize_B_keeps_Q(self, weighted_interval, rng):
        """Test that normalization sets B = 1 without changing Q."""
        w = domain_grid.smooth_random_field(weighted_interval.domain, rng, 0.5, 2.0)

        normalized = variational.normalize_B(weighted_interval, w)

        assert variational.escobar_B(weighted_interval, normalized) == pytest.approx(1.0)
        assert variational.escobar_quotient(weighted_interval, normalized) == pytest.approx(
            variational.escobar_quotient(weighted_interval, w)
        )

    def test_B_is_volume_over_boundary_term(self, weighted_interval):
        """Test B = I^{m/(N-1)} / J^{(2m+n-2)/(N-1)} against the quadrature integrals."""
        bg = weighted_interval
        x = bg.domain.coordinate("x")
        w = 1.0 + 0.5 * x
        p = 2.0 * 3.0 / 2.0
        volume = float(np.sum(bg.domain.quad_weight * w**p))
        b = bg.domain.boundary_index
        trace = float(np.sum(bg.domain.boundary_weight * np.exp(-bg.phi0[b]) * w[b] ** p))

        value = variational.escobar_B(bg, w)

        assert value == pytest.approx(volume ** (1.0 / 3.0) / trace, rel=1e-12)
        assert variational.escobar_quotient(bg, w) == pytest.approx(
            variational.escobar_A(bg, w) * value, rel=1e-12
        )

    def test_unit_constraint_gives_Q_equal_A(self, weighted_interval, rng):
        """Test that B(w) = 1 implies Q(w) = A(w)."""
        w = domain_grid.smooth_random_field(weighted_interval.domain, rng, 0.5, 2.0)

        report = variational.quotient_report(
            weighted_interval, variational.normalize_B(weighted_interval, w)
        )

        assert report.B_value == pytest.approx(1.0, rel=1e-12)
        assert abs(report.Q_value - report.A_value) <= 1e-10 * max(1.0, abs(report.A_value))

    def test_vanishing_trace_is_guarded(self, flat_ball):
        """Test that a field vanishing on the boundary cannot be normalized."""
        r = flat_ball.domain.coordinate("r")

        with pytest.raises(DivisionGuardError):
            variational.escobar_B(flat_ball, 1.0 - r**2)


@pytest.mark.variational
@pytest.mark.integration
class TestMinimization:
    """Test the projected-gradient descent."""

    def test_minimizer_reaches_constant_on_flat_ball(self, flat_ball):
        """Test descent from 1 + 0.2 r^2 reaches the sharp value with nonincreasing Q."""
        r = flat_ball.domain.coordinate("r")

        result = variational.minimize_escobar(flat_ball, 1.0 + 0.2 * r**2)

        assert result.status == "converged"
        assert not result.floor_active
        assert result.lambda_estimate <= sqrt(pi) * 1.02
        assert np.all(np.diff(result.history) <= 1e-12)
        assert variational.escobar_B(flat_ball, result.w) == pytest.approx(1.0)

    def test_multistart_preserves_order(self, flat_ball):
        """Test that concurrent starts return results in input order."""
        r = flat_ball.domain.coordinate("r")
        inits = [np.ones(41), 1.0 + 0.2 * r**2]

        results = variational.minimize_escobar_multistart(flat_ball, inits, max_iter=5)

        assert len(results) == 2
        assert results[0].iterations == 0
        assert results[0].lambda_estimate == pytest.approx(sqrt(pi), rel=1e-10)


@pytest.mark.variational
@pytest.mark.unit
class TestAubinEstimate:
    """Test the versioned trial family and the constant estimate."""

    def test_trial_family_layout(self, cylinder_domain):
        """Test trial ids and determinism of the seeded bumps."""
        bg = smms_core.make_background(cylinder_domain)

        first = variational.build_trial_family(bg, seed=1)
        second = variational.build_trial_family(bg, seed=1)

        assert [name for name, _ in first] == [
            "constant",
            "bubble_1",
            "bubble_0.5",
            "bubble_0.2",
            "bubble_0.1",
            "bubble_0.05",
            "bump_0",
            "bump_1",
            "bump_2",
            "bump_3",
        ]
        for (_, a), (_, b) in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_estimate_nonincreasing_in_epsilon(self, cylinder_domain):
        """Test that a larger leading coefficient needs a smaller constant."""
        bg = smms_core.make_background(cylinder_domain)
        family = variational.build_trial_family(bg, seed=1)

        estimates = [
            variational.estimate_aubin_constant(bg, eps, family).c_estimate
            for eps in (0.01, 0.1, 1.0)
        ]

        assert estimates[0] >= estimates[1] >= estimates[2]

    def test_estimate_record(self, cylinder_domain):
        """Test the estimate record and its frame."""
        bg = smms_core.make_background(cylinder_domain)

        estimate = variational.estimate_aubin_constant(bg, 0.5, seed=2)
        frame = estimate.to_frame()

        assert estimate.family_version == variational.TRIAL_FAMILY_VERSION
        assert estimate.c_estimate == pytest.approx(max(estimate.required))
        assert list(frame.columns) == ["trial_id", "required", "slack"]
        assert (frame["slack"] >= 0).all()

    def test_estimate_rejects_bad_epsilon(self, cylinder_domain):
        """Test that epsilon <= 0 is rejected."""
        with pytest.raises(InvalidInputError):
            variational.estimate_aubin_constant(smms_core.make_background(cylinder_domain), 0.0)
