"""Sharp trace constant, weighted Escobar quotient and its minimization.

With ``p = 2(N-1)/(N-2)``, ``J = oint |w|^p e^{-phi} dA`` and
``I = int |w|^p e^{-(m-1)phi/m} dV``:

* ``A(w) = E(w) / c``, E the energy form and ``c = 4(N-1)/(N-2)``,
* ``B(w) = I^{m/(N-1)} / J^{(2m+n-2)/(N-1)}``, the constraint functional (volume over boundary),
* ``Q(w) = A(w) / (J^{(2m+n-2)/(N-1)} / I^{m/(N-1)}) = A(w) B(w)``.

The quotient denominator is the reciprocal of B, so the constraint ``B(w) = 1`` still gives
``Q = A``. On the flat half-space Q is the trace Gagliardo-Nirenberg-Sobolev quotient.
"""
from concurrent.futures import ThreadPoolExecutor
from math import log, pi
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import structlog
from numpy.typing import NDArray
from scipy.sparse.linalg import splu
from scipy.special import gammaln

from smms_lab.config import settings
from smms_lab.exceptions import DivisionGuardError, InvalidDomainError, InvalidInputError
from smms_lab.models import (
    AubinEstimate,
    BoundaryField,
    DomainKind,
    MinimizationResult,
    NodalField,
    QuotientReport,
)
from smms_lab.services import domain_grid, smms_core
from smms_lab.services.domain_grid import DiscreteDomain
from smms_lab.services.smms_core import ConformalFactor, SmmsBackground, positive_power

logger = structlog.get_logger()

ARMIJO = 1e-4
MAX_BACKTRACKS = 50
DEFAULT_TOL = 1e-7

# Bump the version whenever the Aubin trial family changes
TRIAL_FAMILY_VERSION = "1"
BUBBLE_SCALES = (1.0, 0.5, 0.2, 0.1, 0.05)

# Denominators below this are treated as zero
DIVISION_TOL = 1e-300


def _log_sphere_area(d: float) -> float:
    return float(log(2.0) + 0.5 * (d + 1.0) * log(pi) - gammaln(0.5 * (d + 1.0)))


def lambda_mn(m: float, n: int) -> float:
    """Sharp constant of the trace GNS inequality on the half-space ``R^n_+``."""
    if n < 3 or int(n) != n:
        raise InvalidInputError("n must be an integer >= 3", n=n)
    if m < 0:
        raise InvalidInputError("m must be nonnegative", m=m)
    big = m + n
    d = 2.0 * m + n - 1.0
    log_value = 2.0 * log(big - 2.0)
    log_value += d / (big - 1.0) * (_log_sphere_area(d) / d - log(2.0 * (2.0 * m + n - 2.0)))
    log_value += (gammaln(d) - m * log(pi) - gammaln(big - 1.0)) / (big - 1.0)
    return float(np.exp(log_value))


def gns_extremal(
    epsilon: float, x0_offset: float = 0.0, m: float = 0.0, n: int = 3
) -> Callable[[NDArray[np.float64], NDArray[np.float64]], NDArray[np.float64]]:
    """Evaluator of ``(2 eps / ((eps + t)^2 + |x - x0|^2))^{(N-2)/2}`` at ``(r, t)``.

    ``r = |x|`` is measured along the ray through ``x0``, so ``|x - x0| = |r - x0_offset|``.
    """
    if epsilon <= 0:
        raise InvalidInputError("epsilon must be positive", epsilon=epsilon)
    exponent = 0.5 * (m + n - 2.0)

    def evaluate(r: NDArray[np.float64], t: NDArray[np.float64]) -> NDArray[np.float64]:
        distance_sq = (epsilon + np.asarray(t)) ** 2 + (np.asarray(r) - x0_offset) ** 2
        return np.asarray((2.0 * epsilon / distance_sq) ** exponent, dtype=np.float64)

    return evaluate


def _halfspace_check(domain: DiscreteDomain, n: int) -> None:
    if domain.kind not in (DomainKind.HALFSPACE_CYLINDER, DomainKind.HALFSPACE_BOX):
        raise InvalidDomainError("Trace GNS quotient needs a half-space domain", kind=domain.kind)
    if domain.dim_n != n:
        raise InvalidDomainError("Domain dimension does not match n", dim_n=domain.dim_n, n=n)


def trace_gns_quotient(domain: DiscreteDomain, w: NodalField, m: float, n: int) -> float:
    """``(int |grad w|^2)(int |w|^p)^{m/(N-1)} / (oint |w|^p)^{(2m+n-2)/(N-1)}``."""
    _halfspace_check(domain, n)
    w = np.asarray(w, dtype=np.float64)
    big = m + n
    p = 2.0 * (big - 1.0) / (big - 2.0)
    dirichlet = float(w @ (domain_grid.stiffness_matrix(domain) @ w))
    power = positive_power(np.abs(w), p)
    volume = domain_grid.integrate_volume(domain, power)
    trace = domain_grid.integrate_boundary(domain, power[domain.boundary_index])
    if trace <= DIVISION_TOL:
        raise DivisionGuardError("Trace of w vanishes on the boundary")
    return dirichlet * volume ** (m / (big - 1.0)) / trace ** ((2.0 * m + n - 2.0) / (big - 1.0))


def truncation_tail_bound(domain: DiscreteDomain, epsilon: float, m: float, n: int) -> float:
    """Largest relative tail of the three quotient integrals of ``w_{eps,0}`` outside the box.

    Uses ``w <= (2 eps)^{(N-2)/2} rho^{-(N-2)}`` with ``rho >= min(R, T)`` beyond the
    truncation faces, integrated in closed form over the complement of a half-ball.
    """
    _halfspace_check(domain, n)
    big = m + n
    extent = min(float(np.max(np.abs(axis.coords))) for axis in domain.axes)
    s = 0.5 * (big - 2.0)
    half_sphere = 0.5 * np.exp(_log_sphere_area(n - 1))
    scale = 2.0 * epsilon
    tail_grad = half_sphere * 4.0 * s**2 * scale ** (2 * s) * extent ** (2 - n - 2 * m)
    tail_grad /= n + 2.0 * m - 2.0
    tail_vol = half_sphere * scale ** (big - 1.0) * extent ** (2 - n - 2 * m) / (n + 2 * m - 2)
    tail_trace = np.exp(_log_sphere_area(n - 2)) * scale ** (big - 1.0)
    tail_trace *= extent ** (1 - n - 2 * m) / (n + 2.0 * m - 1.0)

    r, t = domain_grid.trace_coordinates(domain)
    w = gns_extremal(epsilon, 0.0, m, n)(r, t)
    p = 2.0 * (big - 1.0) / (big - 2.0)
    dirichlet = float(w @ (domain_grid.stiffness_matrix(domain) @ w))
    power = positive_power(w, p)
    volume = domain_grid.integrate_volume(domain, power)
    trace = domain_grid.integrate_boundary(domain, power[domain.boundary_index])
    return float(max(tail_grad / dirichlet, tail_vol / volume, tail_trace / trace))


# Weighted Escobar quotient


def _exponents(bg: SmmsBackground) -> Tuple[float, float, float]:
    """``(p, m/(N-1), (2m+n-2)/(N-1))``."""
    big = bg.total_dim
    return (
        2.0 * (big - 1.0) / (big - 2.0),
        bg.dim_m / (big - 1.0),
        (2.0 * bg.dim_m + bg.dim_n - 2.0) / (big - 1.0),
    )


def _volume_weight(bg: SmmsBackground) -> NodalField:
    """``q_i e^{-(m-1) phi0 / m}``, the quadrature of the B volume factor."""
    if bg.dim_m == 0:
        return np.asarray(bg.domain.quad_weight, dtype=np.float64)
    factor = np.exp(-(bg.dim_m - 1.0) / bg.dim_m * bg.phi0)
    return np.asarray(bg.domain.quad_weight * factor, dtype=np.float64)


def _integrals(bg: SmmsBackground, w: NodalField) -> Tuple[float, float]:
    """``(I, J)`` of ``|w|^p``; ``I`` is 1 when ``m = 0``."""
    p, _, _ = _exponents(bg)
    power = positive_power(np.abs(w), p)
    trace = float(np.sum(smms_core.boundary_mass_weights(bg) * power[bg.domain.boundary_index]))
    if trace <= DIVISION_TOL:
        raise DivisionGuardError("Trace of w vanishes on the boundary")
    if bg.dim_m == 0:
        return 1.0, trace
    volume = float(np.sum(_volume_weight(bg) * power))
    if volume <= DIVISION_TOL:
        raise DivisionGuardError("Volume integral of w vanishes")
    return volume, trace


def escobar_A(bg: SmmsBackground, w: NodalField) -> float:
    """Energy form over ``4(N-1)/(N-2)``."""
    w = np.asarray(w, dtype=np.float64)
    return float(w @ (smms_core.energy_matrix(bg) @ w)) / bg.c_coef


def escobar_B(bg: SmmsBackground, w: NodalField) -> float:
    """``I^{m/(N-1)} / J^{(2m+n-2)/(N-1)}``, homogeneous of degree -2 in ``w``."""
    _, a, b = _exponents(bg)
    volume, trace = _integrals(bg, np.asarray(w, dtype=np.float64))
    return float(volume**a / trace**b)


def _denominator(bg: SmmsBackground, w: NodalField) -> float:
    """Quotient denominator ``J^{(2m+n-2)/(N-1)} / I^{m/(N-1)} = 1 / B(w)``."""
    _, a, b = _exponents(bg)
    volume, trace = _integrals(bg, np.asarray(w, dtype=np.float64))
    return float(trace**b / volume**a)


def escobar_quotient(bg: SmmsBackground, w: NodalField) -> float:
    return escobar_A(bg, w) / _denominator(bg, w)


def normalize_B(bg: SmmsBackground, w: NodalField) -> NodalField:
    """Rescale ``w`` so that ``B(w) = 1``; Q is unchanged."""
    w = np.asarray(w, dtype=np.float64)
    return np.asarray(w / np.sqrt(_denominator(bg, w)), dtype=np.float64)


def _gradient_rows(bg: SmmsBackground, w: NodalField, dirichlet: float) -> NodalField:
    """First-variation rows with ``dirichlet = c Q(w) / B(w) = c A(w)``."""
    p, _, _ = _exponents(bg)
    big = bg.total_dim
    volume, trace = _integrals(bg, w)
    power = positive_power(w, p - 1.0)
    rows = smms_core.energy_matrix(bg) @ w
    if bg.dim_m > 0:
        rows = rows + bg.dim_m / (big - 2.0) * dirichlet / volume * _volume_weight(bg) * power
    boundary = np.zeros(bg.domain.node_count)
    boundary[bg.domain.boundary_index] = smms_core.boundary_mass_weights(bg)
    coupling = (2.0 * bg.dim_m + bg.dim_n - 2.0) / (big - 2.0)
    return np.asarray(rows - coupling * dirichlet / trace * boundary * power, dtype=np.float64)


def quotient_gradient(bg: SmmsBackground, w: NodalField) -> NodalField:
    """Gradient of Q with respect to the nodal values of ``w > 0``."""
    w = ConformalFactor(np.asarray(w, dtype=np.float64)).w
    denominator = _denominator(bg, w)
    dirichlet = bg.c_coef * escobar_A(bg, w)
    return np.asarray(2.0 / (bg.c_coef * denominator) * _gradient_rows(bg, w, dirichlet))


def el_residual(
    bg: SmmsBackground, w: NodalField, Q_value: Optional[float] = None
) -> Tuple[NodalField, BoundaryField]:
    """Pointwise Euler-Lagrange defects of Q at ``w``.

    Interior: ``L w + m/(N-2) D/I e^{phi/m} w^{p-1}`` at interior nodes (coupling dropped for
    m = 0). Boundary: ``B w - (2m+n-2)/(2(N-2)) D/J w^{p-1}`` plus the interior defect over
    the half cell. ``D = c Q / B``, which is ``c A`` when ``Q_value`` is omitted.
    """
    w = ConformalFactor(np.asarray(w, dtype=np.float64)).w
    d = bg.domain
    b = d.boundary_index
    p, _, _ = _exponents(bg)
    big = bg.total_dim
    if Q_value is None:
        dirichlet = bg.c_coef * escobar_A(bg, w)
    else:
        dirichlet = bg.c_coef * Q_value * _denominator(bg, w)
    volume, trace = _integrals(bg, w)
    power = positive_power(w, p - 1.0)
    interior = smms_core.apply_L(bg, w)
    if bg.dim_m > 0:
        coupling = bg.dim_m / (big - 2.0) * dirichlet / volume
        interior = interior + coupling * np.exp(bg.phi0 / bg.dim_m) * power
    boundary_coupling = (2.0 * bg.dim_m + bg.dim_n - 2.0) / (2.0 * (big - 2.0))
    boundary_coupling *= dirichlet / trace
    boundary = smms_core.apply_B(bg, w) - boundary_coupling * power[b]
    boundary = boundary + d.quad_weight[b] * interior[b] / (2.0 * d.boundary_weight)
    interior = interior.copy()
    interior[b] = 0.0
    return np.asarray(interior, dtype=np.float64), np.asarray(boundary, dtype=np.float64)


def _el_norm(bg: SmmsBackground, w: NodalField, Q_value: Optional[float] = None) -> float:
    interior, boundary = el_residual(bg, w, Q_value)
    return float(max(np.max(np.abs(interior)), np.max(np.abs(boundary))))


def quotient_report(
    bg: SmmsBackground,
    w: NodalField,
    trial_id: str = "w",
    tail_bound: Optional[float] = None,
) -> QuotientReport:
    """A, B and Q of ``w`` with its Euler-Lagrange certificate."""
    w = np.asarray(w, dtype=np.float64)
    a_value = escobar_A(bg, w)
    b_value = escobar_B(bg, w)
    interior, boundary = el_residual(bg, w)
    return QuotientReport(
        A_value=a_value,
        B_value=b_value,
        Q_value=a_value * b_value,
        el_interior_residual=float(np.max(np.abs(interior))),
        el_boundary_residual=float(np.max(np.abs(boundary))),
        trial_id=trial_id,
        tail_bound=tail_bound,
    )


# Minimization


def minimize_escobar(
    bg: SmmsBackground,
    init: "ConformalFactor | NodalField",
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
) -> MinimizationResult:
    """Projected Sobolev-gradient descent on Q over ``{w > 0, B(w) = 1}``.

    Steps follow ``-(K + M)^{-1} grad Q`` with Armijo backtracking; iterates are clipped at the
    positivity floor, re-checked for descent and renormalized to ``B = 1``.
    """
    max_iter = max_iter or settings.minimize_max_iter
    floor = settings.positivity_floor
    w = normalize_B(bg, ConformalFactor(smms_core.as_field(init)).w)
    precond = splu(
        (smms_core.weighted_stiffness(bg) + sp.diags(smms_core.mass_weights(bg))).tocsc()
    )
    q_value = escobar_quotient(bg, w)
    history = [q_value]
    status = "max_iter"
    t = 1.0
    for _iteration in range(max_iter):
        if _el_norm(bg, w) <= tol:
            status = "converged"
            break
        grad = quotient_gradient(bg, w)
        direction = -precond.solve(grad)
        slope = float(grad @ direction)
        t = min(1.0, 2.0 * t)
        for _ in range(MAX_BACKTRACKS):
            trial = np.maximum(w + t * direction, floor)
            q_trial = escobar_quotient(bg, trial)
            if q_trial <= q_value + ARMIJO * t * slope:
                break
            t *= 0.5
        else:
            status = "stalled"
            logger.warning("escobar_line_search_stalled", q_value=q_value, iterations=len(history))
            break
        w = normalize_B(bg, trial)
        q_value = q_trial
        history.append(q_value)
    else:
        if _el_norm(bg, w) <= tol:
            status = "converged"

    floor_active = bool(np.min(w) <= floor * (1.0 + 1e-9))
    if floor_active:
        logger.warning("escobar_positivity_floor_active", min_value=float(np.min(w)))
        status = "floor_active"
    report = quotient_report(bg, w, trial_id="minimizer")
    logger.info(
        "escobar_minimized",
        status=status,
        lambda_estimate=report.Q_value,
        iterations=len(history) - 1,
        el_interior=report.el_interior_residual,
        el_boundary=report.el_boundary_residual,
    )
    return MinimizationResult(
        w=w,
        lambda_estimate=report.Q_value,
        report=report,
        history=history,
        iterations=len(history) - 1,
        status=status,
        floor_active=floor_active,
    )


def minimize_escobar_multistart(
    bg: SmmsBackground,
    inits: Sequence["ConformalFactor | NodalField"],
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
) -> List[MinimizationResult]:
    """Independent minimizations, run concurrently, returned in the order of ``inits``."""
    with ThreadPoolExecutor(max_workers=settings.threads) as pool:
        return list(pool.map(lambda init: minimize_escobar(bg, init, tol, max_iter), inits))


# Aubin-type constant


def build_trial_family(
    bg: SmmsBackground, seed: Optional[int] = None, bump_count: int = 4
) -> List[Tuple[str, NodalField]]:
    """Versioned trial family: the constant, boundary bubbles at fixed scales, seeded bumps."""
    d = bg.domain
    tangential, normal = domain_grid.trace_coordinates(d)
    family: List[Tuple[str, NodalField]] = [("constant", np.ones(d.node_count))]
    for scale in BUBBLE_SCALES:
        bubble = gns_extremal(scale, 0.0, bg.dim_m, bg.dim_n)(tangential, normal)
        family.append((f"bubble_{scale:g}", bubble))
    rng = np.random.default_rng(settings.seed if seed is None else seed)
    for index in range(bump_count):
        family.append(
            (f"bump_{index}", domain_grid.smooth_random_field(d, rng, 0.05, 1.0))
        )
    return family


def estimate_aubin_constant(
    bg: SmmsBackground,
    epsilon: float,
    trial_family: Optional[Sequence[Tuple[str, NodalField]]] = None,
    seed: Optional[int] = None,
) -> AubinEstimate:
    """Smallest C for which every trial satisfies the boundary inequality with leading
    coefficient ``1/Lambda_{m,n} + epsilon``.

    Each trial needs ``C >= (1/B(w) - (1/Lambda + eps) G(w)) / Z(w)`` with ``G`` the weighted
    Dirichlet integral and ``Z = int w^2 e^{-phi} + oint w^2 e^{-phi}``.
    """
    if epsilon <= 0:
        raise InvalidInputError("epsilon must be positive", epsilon=epsilon)
    family = list(trial_family) if trial_family is not None else build_trial_family(bg, seed)
    if not family:
        raise InvalidInputError("Trial family is empty")
    leading = 1.0 / lambda_mn(bg.dim_m, bg.dim_n) + epsilon
    stiffness = smms_core.weighted_stiffness(bg)
    mass = smms_core.mass_weights(bg)
    boundary = smms_core.boundary_mass_weights(bg)
    b = bg.domain.boundary_index
    required = []
    for _, w in family:
        w = np.asarray(w, dtype=np.float64)
        dirichlet = float(w @ (stiffness @ w))
        zeroth = float(np.sum(mass * w**2) + np.sum(boundary * w[b] ** 2))
        required.append((_denominator(bg, w) - leading * dirichlet) / zeroth)
    estimate = AubinEstimate(
        epsilon=epsilon,
        c_estimate=float(max(required)),
        trial_ids=[name for name, _ in family],
        required=required,
        family_version=TRIAL_FAMILY_VERSION,
    )
    logger.info(
        "aubin_estimated",
        epsilon=epsilon,
        c_estimate=estimate.c_estimate,
        trials=len(family),
        family_version=TRIAL_FAMILY_VERSION,
    )
    return estimate
