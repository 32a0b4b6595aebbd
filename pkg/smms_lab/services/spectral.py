"""First eigenpairs of ``(L, B)`` and ``(Lbar, Bbar)`` and the integral sign criteria.

Both problems are assembled as symmetric pencils ``(A, M)`` from quadrature, with the Robin
condition entering as the natural boundary term of the quadratic form. The bottom of the
spectrum is reached by inverse iteration with a fixed shift below the Gershgorin bound, so
``A - shift M`` is a nonsingular M-matrix and every iterate stays positive.
"""
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
import structlog
from scipy.sparse.linalg import splu

from smms_lab.config import settings
from smms_lab.exceptions import (
    HypothesisViolationError,
    InvariantViolationError,
    NonConvergenceError,
)
from smms_lab.models import EigenProblem, NodalField, SpectralResult, Verdict
from smms_lab.services import domain_grid, smms_core
from smms_lab.services.smms_core import ConformalFactor, SmmsBackground

logger = structlog.get_logger()

# Max-norm below which R^m and H^m count as vanishing simultaneously
VANISHING_TOL = 1e-10

# Relative quadrature slack of the integral hypotheses
QUADRATURE_TOL = 1e-12


def _pencil(
    bg: SmmsBackground,
    problem: EigenProblem,
    conformal_factor: Optional[ConformalFactor] = None,
) -> Tuple[sp.csr_matrix, NodalField, NodalField]:
    """Quadratic-form matrix, mass diagonal and residual row scale of one problem."""
    bg.require_flat_metric()
    mass = smms_core.mass_weights(bg)
    row_scale = mass.copy()
    b = bg.domain.boundary_index
    boundary = smms_core.boundary_mass_weights(bg)
    if problem == EigenProblem.LB:
        matrix = smms_core.energy_matrix(bg)
        if conformal_factor is not None:
            # E(w u) / int u^2 e^{-phi} dV_g, written for v = w u
            mass = mass * np.exp(bg.k_exp * np.log(conformal_factor.w))
            row_scale = mass.copy()
        row_scale[b] = 2.0 * boundary
    else:
        big = bg.total_dim - 1.0
        r_weighted = smms_core.weighted_scalar_curvature(bg)
        h_weighted = smms_core.weighted_mean_curvature(bg)
        matrix = (
            smms_core.weighted_stiffness(bg)
            - sp.diags(mass * r_weighted / big)
            - smms_core.boundary_mass_matrix(bg, h_weighted / big)
        ).tocsr()
        row_scale[b] = boundary
    return matrix, mass, row_scale


def _gershgorin_lower(matrix: sp.csr_matrix, scale: NodalField) -> float:
    """Lower bound of the spectrum of ``diag(scale)^{-1} matrix``."""
    diag = matrix.diagonal()
    off = np.asarray(abs(matrix).sum(axis=1)).ravel() - np.abs(diag)
    return float(np.min((diag - off) / scale))


def _inverse_iteration(
    matrix: sp.csr_matrix,
    mass: NodalField,
    row_scale: NodalField,
    problem: EigenProblem,
    tol: float,
    max_iter: int,
) -> SpectralResult:
    shift = _gershgorin_lower(matrix, mass) - 1.0
    lu = splu((matrix - sp.diags(shift * mass)).tocsc())

    u = np.ones(matrix.shape[0])
    lambda1 = float(u @ (matrix @ u)) / float(u @ (mass * u))
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        x = lu.solve(mass * u)
        if np.sum(x) < 0:
            x = -x
        u = x / np.max(np.abs(x))
        lambda1 = float(u @ (matrix @ u)) / float(u @ (mass * u))
        defect = (matrix @ u - lambda1 * mass * u) / row_scale
        residual = float(np.max(np.abs(defect)))
        if residual <= tol:
            break
    else:
        logger.error(
            "eigen_not_converged", problem=problem.value, residual=residual, max_iter=max_iter
        )
        raise NonConvergenceError(
            f"Inverse iteration for {problem.value} did not converge",
            residual=residual,
            lambda1=lambda1,
            iterations=max_iter,
            shift=shift,
        )

    if np.min(u) <= 0:
        raise InvariantViolationError(
            "First eigenfunction is not strictly positive", min_value=float(np.min(u))
        )
    logger.info(
        "eigen_converged",
        problem=problem.value,
        lambda1=lambda1,
        iterations=iteration,
        residual=residual,
    )
    return SpectralResult(
        problem=problem,
        lambda1=lambda1,
        eigenfunction=u,
        iterations=iteration,
        residual=residual,
        shift=shift,
    )


def first_eigen_LB(
    bg: SmmsBackground,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    conformal_factor: Optional[ConformalFactor] = None,
) -> SpectralResult:
    """First eigenpair of ``L u = lambda u`` in M, ``B u = 0`` on the boundary.

    With ``conformal_factor`` the problem is posed on the SMMS conformal to ``bg`` through it,
    using ``L_new u = w^{-(N+2)/(N-2)} L(w u)``; the returned eigenfunction lives on that SMMS.

    The reported residual is the absolute max-norm defect of the eigen-equation rows (interior
    rows per unit volume, boundary rows as Robin defects). Its rounding floor grows like
    ``c / h^2``, about 1e-10 at h = 0.005.
    """
    matrix, mass, row_scale = _pencil(bg, EigenProblem.LB, conformal_factor)
    result = _inverse_iteration(
        matrix,
        mass,
        row_scale,
        EigenProblem.LB,
        tol or settings.eigen_tol,
        max_iter or settings.eigen_max_iter,
    )
    if conformal_factor is not None:
        u = result.eigenfunction / conformal_factor.w
        result.eigenfunction = u / np.max(u)
    return result


def first_eigen_barLbarB(
    bg: SmmsBackground, tol: Optional[float] = None, max_iter: Optional[int] = None
) -> SpectralResult:
    """First eigenpair of ``-Delta_phi u - R u/(N-1) = lambda u``, ``du/dnu = H u/(N-1)``.

    The mass is ``int u^2 e^{-phi0} dV`` with no boundary term.
    """
    matrix, mass, row_scale = _pencil(bg, EigenProblem.BAR)
    return _inverse_iteration(
        matrix,
        mass,
        row_scale,
        EigenProblem.BAR,
        tol or settings.eigen_tol,
        max_iter or settings.eigen_max_iter,
    )


def rayleigh_quotient(
    bg: SmmsBackground, u: NodalField, problem: EigenProblem = EigenProblem.LB
) -> float:
    """Discrete Rayleigh quotient whose minimum over ``u`` is the first eigenvalue."""
    matrix, mass, _ = _pencil(bg, problem)
    u = np.asarray(u, dtype=np.float64)
    return float(u @ (matrix @ u)) / float(u @ (mass * u))


# Integral criteria


def criterion_integrals(bg: SmmsBackground) -> Tuple[float, float]:
    """``(int R^m e^{-phi0} dV, oint H^m e^{-phi0} dA)``.

    Raises:
        HypothesisViolationError: R^m and H^m both vanish in max norm.
    """
    r_weighted = smms_core.weighted_scalar_curvature(bg)
    h_weighted = smms_core.weighted_mean_curvature(bg)
    r_max = float(np.max(np.abs(r_weighted)))
    h_max = float(np.max(np.abs(h_weighted))) if h_weighted.size else 0.0
    if r_max <= VANISHING_TOL and h_max <= VANISHING_TOL:
        raise HypothesisViolationError(
            "Weighted scalar and mean curvature vanish simultaneously",
            failed=["curvatures_not_both_zero"],
            r_max=r_max,
            h_max=h_max,
        )
    volume = domain_grid.integrate_volume(bg.domain, r_weighted, bg.density)
    boundary = domain_grid.integrate_boundary(bg.domain, h_weighted, bg.boundary_density)
    return volume, boundary


def _slack(bg: SmmsBackground) -> float:
    r_abs = np.abs(smms_core.weighted_scalar_curvature(bg))
    h_abs = np.abs(smms_core.weighted_mean_curvature(bg))
    total = domain_grid.integrate_volume(bg.domain, r_abs, bg.density)
    total += domain_grid.integrate_boundary(bg.domain, h_abs, bg.boundary_density)
    return QUADRATURE_TOL * total


def criterion_bar_sign(bg: SmmsBackground) -> Verdict:
    """``int R + oint H >= 0`` certifies ``lambda1(Lbar, Bbar) < 0``."""
    volume, boundary = criterion_integrals(bg)
    holds = volume + boundary >= -_slack(bg)
    verdict = Verdict.NEGATIVE_CERTIFIED if holds else Verdict.INCONCLUSIVE
    logger.info(
        "criterion_evaluated",
        problem=EigenProblem.BAR.value,
        volume_integral=volume,
        boundary_integral=boundary,
        verdict=verdict.value,
    )
    return verdict


def criterion_LB_sign(bg: SmmsBackground) -> Verdict:
    """``int R + 2 oint H <= 0`` certifies ``lambda1(L, B) < 0``."""
    volume, boundary = criterion_integrals(bg)
    holds = volume + 2.0 * boundary <= _slack(bg)
    verdict = Verdict.NEGATIVE_CERTIFIED if holds else Verdict.INCONCLUSIVE
    logger.info(
        "criterion_evaluated",
        problem=EigenProblem.LB.value,
        volume_integral=volume,
        boundary_integral=boundary,
        verdict=verdict.value,
    )
    return verdict
