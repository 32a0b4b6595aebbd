"""Tests for the sub/supersolution method, the monotone iteration and the Newton check."""
import numpy as np
import pytest

from smms_lab.exceptions import HypothesisViolationError, InvalidInputError
from smms_lab.models import SolverConfig
from smms_lab.services import monotone_solver, smms_core


def _config(bg, epsilon=0.5, delta=0.5, **overrides):
    gamma, rho = monotone_solver.choose_gamma_rho(bg)
    values = dict(
        gamma=gamma,
        rho=rho,
        epsilon=epsilon,
        delta=delta,
        alpha=1.0 - epsilon ** (2.0 / (bg.total_dim - 2.0)),
        tol=1e-9,
        max_iter=20000,
    )
    values.update(overrides)
    return SolverConfig(**values)


@pytest.mark.solver
@pytest.mark.unit
class TestSubSuper:
    """Test defects, bounds and the sub/supersolution builders."""

    def test_unit_factor_has_zero_defect(self, solvable_background):
        """Test that w = 1 solves the system exactly on any background."""
        interior, boundary = monotone_solver.check_sub_super(solvable_background, np.ones(41))

        np.testing.assert_allclose(interior, 0.0, atol=1e-10)
        np.testing.assert_allclose(boundary, 0.0, atol=1e-10)

    def test_choose_gamma_rho(self, solvable_background):
        """Test gamma = 1.1 N/(2(N-1)) max|R| and rho = 0 when H = 0."""
        gamma, rho = monotone_solver.choose_gamma_rho(solvable_background)

        assert gamma == pytest.approx(1.1 * 4.0 / 6.0 * 3.0)
        assert rho == 0.0

    def test_solver_config_validation(self):
        """Test that SolverConfig rejects out-of-range parameters."""
        with pytest.raises(InvalidInputError):
            SolverConfig(
                gamma=0.0, rho=0.0, epsilon=0.5, delta=0.5, alpha=0.5, tol=1e-9, max_iter=1
            )
        with pytest.raises(InvalidInputError):
            SolverConfig(
                gamma=1.0, rho=0.0, epsilon=1.5, delta=0.5, alpha=0.5, tol=1e-9, max_iter=1
            )

    def test_gamma_below_bound_rejected(self, solvable_background):
        """Test that T refuses a gamma below the order-preservation bound."""
        with pytest.raises(InvalidInputError):
            monotone_solver.MonotoneSolver(
                solvable_background, _config(solvable_background, gamma=0.5)
            )

    def test_lower_and_upper_solutions(self, solvable_background):
        """Test that the builders return an ordered pair with the right defect signs."""
        lower = monotone_solver.build_lower_solution(solvable_background)
        upper = monotone_solver.build_upper_solution(solvable_background)
        inner = solvable_background.domain.interior_index

        lower_interior, lower_boundary = monotone_solver.check_sub_super(solvable_background, lower)
        upper_interior, upper_boundary = monotone_solver.check_sub_super(solvable_background, upper)

        assert np.all((lower > 0) & (lower < 1))
        assert np.all((upper > 0) & (upper < 1))
        assert np.all(lower_interior[inner] < 0)
        assert np.all(lower_boundary <= 1e-12)
        assert np.all(upper_interior[inner] > 0)
        assert np.all(upper_boundary >= -1e-12)

    def test_lower_solution_needs_negative_eigenvalue(self, positive_background):
        """Test that lambda1(L, B) >= 0 is reported as a hypothesis violation."""
        with pytest.raises(HypothesisViolationError) as exc_info:
            monotone_solver.build_lower_solution(positive_background)

        assert exc_info.value.failed == ["lambda1_LB_negative"]


@pytest.mark.solver
@pytest.mark.unit
class TestMonotoneIteration:
    """Test the operator T and the iteration."""

    def test_T_maps_bracket_into_itself(self, solvable_background):
        """Test that T(upper) <= upper and T(lower) >= lower."""
        lower = monotone_solver.build_lower_solution(solvable_background)
        upper = monotone_solver.build_upper_solution(solvable_background)
        cfg = _config(solvable_background)

        assert np.all(monotone_solver.apply_T(solvable_background, cfg, upper) <= upper + 1e-10)
        assert np.all(monotone_solver.apply_T(solvable_background, cfg, lower) >= lower - 1e-10)

    def test_T_preserves_order(self, solvable_background, rng):
        """Test that T(u) >= T(v) for 50 random ordered pairs u >= v inside the bracket."""
        bg = solvable_background
        lower = monotone_solver.build_lower_solution(bg)
        upper = monotone_solver.build_upper_solution(bg)
        cfg = _config(bg)

        for _ in range(50):
            v = lower + rng.uniform(0.0, 1.0, size=lower.size) * (upper - lower)
            u = v + rng.uniform(0.0, 1.0, size=lower.size) * (upper - v)

            assert np.all(u >= v)
            assert np.all(
                monotone_solver.apply_T(bg, cfg, u) >= monotone_solver.apply_T(bg, cfg, v) - 1e-10
            )

    def test_apply_T_domain(self, solvable_background):
        """Test that T refuses fields outside [0, 1]."""
        with pytest.raises(InvalidInputError):
            monotone_solver.apply_T(
                solvable_background, _config(solvable_background), np.full(41, 1.5)
            )

    def test_unordered_bracket_rejected(self, solvable_background):
        """Test that a lower solution above the upper one is rejected."""
        with pytest.raises(InvalidInputError):
            monotone_solver.monotone_iterate(
                solvable_background,
                _config(solvable_background),
                np.full(41, 0.9),
                np.full(41, 0.1),
            )

    def test_iteration_is_monotone(self, solvable_background):
        """Test that iterates decrease from the upper solution and stay above the lower one."""
        lower = monotone_solver.build_lower_solution(solvable_background)
        upper = monotone_solver.build_upper_solution(solvable_background)
        solver = monotone_solver.MonotoneSolver(solvable_background, _config(solvable_background))

        w = solver.iterate(lower, upper)

        assert np.all(w.w <= upper + 1e-12)
        assert np.all(w.w >= lower - 1e-12)
        assert solver.history[-1]["residual"] <= 1e-9


@pytest.mark.solver
@pytest.mark.integration
class TestSmallerMetric:
    """Test the end-to-end construction and its refusal."""

    def test_finds_smaller_metric(self, solvable_background):
        """Test that the solve returns 0 < w < 1 solving the system."""
        result = monotone_solver.find_smaller_metric(solvable_background)

        assert result.succeeded
        assert result.failed == []
        assert all(result.hypotheses.values())
        assert np.all((result.solution > 0) & (result.solution < 1))
        assert result.residual <= 1e-8
        assert result.newton_deviation < 1e-6
        assert result.iterations == len(result.history)

    def test_refuses_without_hypotheses(self, positive_background):
        """Test that lambda1(L, B) > 0 yields a refusal naming the failed hypothesis."""
        result = monotone_solver.find_smaller_metric(positive_background)

        assert not result.succeeded
        assert result.failed == ["lambda1_LB_negative"]
        assert result.lambda1_LB == pytest.approx(1.0, rel=1e-8)
        assert result.verdict()["residual"] is None


@pytest.mark.solver
@pytest.mark.unit
class TestUniqueness:
    """Test the Newton cross-check and the uniqueness probe."""

    def test_newton_from_solution_takes_no_step(self, negative_background):
        """Test that Newton started at w = 1 returns immediately."""
        w, iterations, residual = monotone_solver.damped_newton(negative_background, np.ones(21))

        assert iterations == 0
        assert residual < 1e-10
        np.testing.assert_array_equal(w.w, 1.0)

    def test_uniqueness_hypotheses(self, negative_background):
        """Test that R = -1, H = 0 satisfies every uniqueness hypothesis."""
        hypotheses = monotone_solver.uniqueness_hypotheses(negative_background)

        assert hypotheses == {
            "H_nonpositive": True,
            "lambda1_bar_nonnegative": True,
            "R_nonpositive": True,
        }

    def test_probe_lands_on_unit_factor(self, negative_background):
        """Test that every random start converges to w = 1."""
        report = monotone_solver.uniqueness_probe(negative_background, count=4, seed=3)

        assert report.all_unit
        assert len(report.distances) == 4
        assert max(report.distances) <= 1e-6

    def test_probe_is_seeded(self, negative_background):
        """Test that the probe repeats exactly for the same seed."""
        first = monotone_solver.uniqueness_probe(negative_background, count=2, seed=11)
        second = monotone_solver.uniqueness_probe(negative_background, count=2, seed=11)

        assert first.distances == second.distances

    def test_smaller_metric_residual_matches_core(self, solvable_background):
        """Test that the reported residual is the core residual of the solution."""
        result = monotone_solver.find_smaller_metric(solvable_background, newton_check=False)

        assert result.newton_deviation is None
        assert result.residual == pytest.approx(
            smms_core.residual_norm(solvable_background, result.solution)
        )
