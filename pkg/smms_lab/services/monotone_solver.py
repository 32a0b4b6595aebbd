"""Sub/supersolution construction and monotone iteration for the equal-curvature system.

The system is ``L w = R w^{(N+2)/(N-2)}`` in M, ``B w = H w^{N/(N-2)}`` on the boundary, in
weak form ``F(w) = A w - M R w^q - 2 P H w^{q'} = 0`` with ``A`` the energy matrix, ``M`` the
lumped mass and ``P`` the boundary mass. The operator T solves the linear Robin problem with
``S = K + gamma M - rho P``; one checks ``S (u - T u) = F(u) / c``, so ``F(u) <= 0`` makes u a
lower solution and ``F(u) >= 0`` an upper one.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import structlog
from scipy.sparse.linalg import splu, spsolve

from smms_lab.config import settings
from smms_lab.exceptions import (
    ConstructionFailureError,
    HypothesisViolationError,
    InvalidInputError,
    InvariantViolationError,
    NonConvergenceError,
    SolverFailureError,
)
from smms_lab.models import (
    BoundaryField,
    NodalField,
    SmallerMetricResult,
    SolverConfig,
    SpectralResult,
    UniquenessReport,
)
from smms_lab.services import domain_grid, smms_core, spectral
from smms_lab.services.smms_core import ConformalFactor, SmmsBackground, positive_power

logger = structlog.get_logger()

# Margin on the gamma bound and its floor when R vanishes
GAMMA_MARGIN = 1.1
GAMMA_FLOOR = 0.1

# Round-off allowance for order and sign checks
ORDER_SLACK = 1e-12

# Tolerance of the sign test H <= 0
SIGN_TOL = 1e-12

NEWTON_MAX_ITER = 100
LINE_SEARCH_HALVINGS = 30


@dataclass(frozen=True)
class _Assembled:
    """Assembled pieces of the weak system, node-sized."""

    energy: sp.csr_matrix
    stiffness: sp.csr_matrix
    mass: NodalField
    boundary: NodalField
    r: NodalField
    h: NodalField
    row_scale: NodalField
    q: float
    qb: float
    c: float

    def weak_defect(self, u: NodalField) -> NodalField:
        """``F(u)``, the weak rows of the system."""
        return np.asarray(
            self.energy @ u
            - self.mass * self.r * positive_power(u, self.q)
            - 2.0 * self.boundary * self.h * positive_power(u, self.qb),
            dtype=np.float64,
        )

    def jacobian(self, u: NodalField) -> sp.csr_matrix:
        diag = self.q * self.mass * self.r * positive_power(u, self.q - 1.0)
        diag = diag + 2.0 * self.qb * self.boundary * self.h * positive_power(u, self.qb - 1.0)
        return (self.energy - sp.diags(diag)).tocsr()


def _assemble(bg: SmmsBackground) -> _Assembled:
    bg.require_flat_metric()
    d = bg.domain
    b = d.boundary_index
    boundary = np.zeros(d.node_count)
    boundary[b] = smms_core.boundary_mass_weights(bg)
    h = np.zeros(d.node_count)
    h[b] = smms_core.weighted_mean_curvature(bg)
    mass = smms_core.mass_weights(bg)
    row_scale = mass.copy()
    row_scale[b] = 2.0 * boundary[b]
    return _Assembled(
        energy=smms_core.energy_matrix(bg),
        stiffness=smms_core.weighted_stiffness(bg),
        mass=mass,
        boundary=boundary,
        r=smms_core.weighted_scalar_curvature(bg),
        h=h,
        row_scale=row_scale,
        q=bg.q_exp,
        qb=bg.q_boundary_exp,
        c=bg.c_coef,
    )


def _split(bg: SmmsBackground, rows: NodalField) -> Tuple[NodalField, BoundaryField]:
    b = bg.domain.boundary_index
    interior = rows.copy()
    interior[b] = 0.0
    return interior, np.asarray(rows[b], dtype=np.float64)


def check_sub_super(bg: SmmsBackground, u: NodalField) -> Tuple[NodalField, BoundaryField]:
    """Signed defects of the system at ``u``, interior rows per unit volume, boundary rows as
    Robin defects.

    Negative everywhere means a lower solution, positive everywhere an upper solution.
    """
    assembled = _assemble(bg)
    rows = assembled.weak_defect(np.asarray(u, dtype=np.float64)) / assembled.row_scale
    return _split(bg, rows)


def choose_gamma_rho(bg: SmmsBackground) -> Tuple[float, float]:
    """Smallest admissible ``(gamma, rho)`` with a 10% margin on gamma.

    ``rho`` also absorbs the positive part of H so that T stays order preserving when the
    boundary term is not of one sign.
    """
    big = bg.total_dim
    r_max = float(np.max(np.abs(smms_core.weighted_scalar_curvature(bg))))
    h = smms_core.weighted_mean_curvature(bg)
    gamma = max(GAMMA_MARGIN * big / (2.0 * (big - 1.0)) * r_max, GAMMA_FLOOR)
    h_min = float(np.min(h)) if h.size else 0.0
    h_pos = float(np.max(np.maximum(h, 0.0))) if h.size else 0.0
    rho = min(0.0, h_min / (big - 1.0), -2.0 / bg.c_coef * h_pos)
    return gamma, rho


def _check_bounds(bg: SmmsBackground, cfg: SolverConfig) -> None:
    gamma, rho = choose_gamma_rho(bg)
    if cfg.gamma < gamma / GAMMA_MARGIN or cfg.rho > rho:
        raise InvalidInputError(
            "gamma/rho violate the order-preservation bounds",
            gamma=cfg.gamma,
            rho=cfg.rho,
            gamma_min=gamma / GAMMA_MARGIN,
            rho_max=rho,
        )


class MonotoneSolver:
    """The operator T on one background with a cached factorization of its Robin matrix.

    Instances own mutable iteration history; use one per solve.
    """

    def __init__(self, bg: SmmsBackground, cfg: SolverConfig):
        _check_bounds(bg, cfg)
        self.bg = bg
        self.cfg = cfg
        self.assembled = _assemble(bg)
        a = self.assembled
        matrix = a.stiffness + sp.diags(cfg.gamma * a.mass - cfg.rho * a.boundary)
        self._lu = splu(matrix.tocsc())
        self.history: List[Dict[str, float]] = []

    def apply(self, v: NodalField) -> NodalField:
        """``T(v)``."""
        a = self.assembled
        v = np.asarray(v, dtype=np.float64)
        interior = -self.cfg.gamma * v + a.r / a.c * (v - positive_power(v, a.q))
        boundary = -self.cfg.rho * v + 2.0 * a.h / a.c * (positive_power(v, a.qb) - v)
        return np.asarray(self._lu.solve(-a.mass * interior + a.boundary * boundary))

    def residual(self, u: NodalField) -> float:
        a = self.assembled
        return float(np.max(np.abs(a.weak_defect(u) / a.row_scale)))

    def iterate(self, lower: NodalField, upper: NodalField) -> ConformalFactor:
        """Iterate ``u <- T(u)`` from ``upper`` until the system residual reaches ``tol``."""
        lower = np.asarray(lower, dtype=np.float64)
        u = np.asarray(upper, dtype=np.float64)
        if np.any(lower > u + ORDER_SLACK):
            raise InvalidInputError("Lower solution exceeds upper solution")
        self.history = []
        residual = self.residual(u)
        for iteration in range(1, self.cfg.max_iter + 1):
            nxt = self.apply(u)
            change = float(np.max(np.abs(nxt - u)))
            if np.any(nxt > u + ORDER_SLACK) or np.any(nxt < lower - ORDER_SLACK):
                logger.error("bracket_violated", iteration=iteration)
                raise InvariantViolationError(
                    "Monotone iterate left the bracket or increased",
                    iteration=iteration,
                    increase=float(np.max(nxt - u)),
                    below_lower=float(np.max(lower - nxt)),
                )
            u = nxt
            residual = self.residual(u)
            self.history.append({"iteration": iteration, "change": change, "residual": residual})
            if residual <= self.cfg.tol:
                logger.info("monotone_converged", iterations=iteration, residual=residual)
                return ConformalFactor(u)
        raise NonConvergenceError(
            "Monotone iteration exceeded max_iter",
            iterations=self.cfg.max_iter,
            residual=residual,
        )


def apply_T(bg: SmmsBackground, cfg: SolverConfig, v: NodalField) -> NodalField:
    """One application of T to ``v`` with ``0 <= v <= 1``."""
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < -ORDER_SLACK) or np.any(v > 1.0 + ORDER_SLACK):
        raise InvalidInputError("T is defined on fields with values in [0, 1]")
    return MonotoneSolver(bg, cfg).apply(np.clip(v, 0.0, 1.0))


def monotone_iterate(
    bg: SmmsBackground, cfg: SolverConfig, lower: NodalField, upper: NodalField
) -> ConformalFactor:
    """Decreasing monotone iteration from ``upper``, bracket checked at every sweep."""
    return MonotoneSolver(bg, cfg).iterate(lower, upper)


# Sub/supersolutions


def _strictly_admissible(
    bg: SmmsBackground, u: NodalField, sign: float
) -> Tuple[bool, float]:
    interior, boundary = check_sub_super(bg, u)
    inner = bg.domain.interior_index
    worst_inner = float(np.max(sign * interior[inner])) if inner.size else -np.inf
    worst_boundary = float(np.max(sign * boundary)) if boundary.size else -np.inf
    ok = worst_inner < 0 and worst_boundary <= ORDER_SLACK
    return ok, max(worst_inner, worst_boundary)


def _lower_with_epsilon(
    bg: SmmsBackground,
    epsilon: float,
    eigen: Optional[SpectralResult] = None,
    max_halvings: Optional[int] = None,
) -> Tuple[NodalField, float]:
    eigen = eigen or spectral.first_eigen_LB(bg)
    if eigen.lambda1 >= 0:
        raise HypothesisViolationError(
            "Lower solution needs lambda1(L, B) < 0",
            failed=["lambda1_LB_negative"],
            lambda1=eigen.lambda1,
        )
    halvings = settings.max_halvings if max_halvings is None else max_halvings
    phi = eigen.eigenfunction
    worst = np.inf
    for attempt in range(halvings + 1):
        alpha = 1.0 - epsilon ** (2.0 / (bg.total_dim - 2.0))
        u0 = epsilon * positive_power(phi, alpha)
        ok, worst = _strictly_admissible(bg, u0, 1.0)
        if ok and np.all(u0 > 0) and np.all(u0 < 1):
            logger.info("lower_solution_accepted", epsilon=epsilon, alpha=alpha, halvings=attempt)
            return u0, epsilon
        logger.warning("lower_solution_halved", epsilon=epsilon, worst_defect=worst)
        epsilon *= 0.5
    raise ConstructionFailureError(
        "No admissible lower solution found", epsilon=epsilon, worst_defect=worst
    )


def _upper_with_delta(
    bg: SmmsBackground,
    delta: float,
    eigen: Optional[SpectralResult] = None,
    max_halvings: Optional[int] = None,
) -> Tuple[NodalField, float]:
    eigen = eigen or spectral.first_eigen_barLbarB(bg)
    if eigen.lambda1 >= 0:
        raise HypothesisViolationError(
            "Upper solution needs lambda1(Lbar, Bbar) < 0",
            failed=["lambda1_bar_negative"],
            lambda1=eigen.lambda1,
        )
    halvings = settings.max_halvings if max_halvings is None else max_halvings
    f1 = eigen.eigenfunction
    worst = np.inf
    for attempt in range(halvings + 1):
        w = 1.0 - delta * f1
        ok, worst = _strictly_admissible(bg, w, -1.0)
        if ok and np.all(w > 0) and np.all(w < 1):
            logger.info("upper_solution_accepted", delta=delta, halvings=attempt)
            return w, delta
        logger.warning("upper_solution_halved", delta=delta, worst_defect=worst)
        delta *= 0.5
    raise ConstructionFailureError(
        "No admissible upper solution found", delta=delta, worst_defect=worst
    )


def build_lower_solution(bg: SmmsBackground, epsilon: float = 0.5) -> NodalField:
    """``u0 = epsilon * phi1^alpha``, epsilon halved until the lower inequalities hold."""
    return _lower_with_epsilon(bg, epsilon)[0]


def build_upper_solution(bg: SmmsBackground, delta: float = 0.5) -> NodalField:
    """``w = 1 - delta * f1``, delta halved until the upper inequalities hold."""
    return _upper_with_delta(bg, delta)[0]


# Newton cross-check and uniqueness


def damped_newton(
    bg: SmmsBackground,
    w0: NodalField,
    tol: Optional[float] = None,
    max_iter: int = NEWTON_MAX_ITER,
) -> Tuple[ConformalFactor, int, float]:
    """Positivity-preserving damped Newton on the system.

    Rows are scaled by ``w^{-(N+2)/(N-2)}`` (curvature-defect scaling) and the step is halved
    until the iterate stays positive and the scaled defect decreases.

    Returns:
        ``(w, iterations, residual)`` with residual the max-norm system defect.
    """
    tol = tol or settings.solver_tol
    a = _assemble(bg)
    w = ConformalFactor(np.asarray(w0, dtype=np.float64)).w.copy()

    def scaled(u: NodalField) -> Tuple[NodalField, NodalField]:
        raw = a.weak_defect(u)
        return raw, positive_power(u, -a.q) / a.row_scale * raw

    raw, f_scaled = scaled(w)
    residual = float(np.max(np.abs(raw / a.row_scale)))
    for iteration in range(1, max_iter + 1):
        if residual <= tol:
            return ConformalFactor(w), iteration - 1, residual
        row = positive_power(w, -a.q) / a.row_scale
        d_row = -a.q * positive_power(w, -a.q - 1.0) / a.row_scale
        jac = sp.diags(row) @ a.jacobian(w) + sp.diags(d_row * raw)
        step = spsolve(jac.tocsc(), -f_scaled)
        merit = float(np.linalg.norm(f_scaled))
        t = 1.0
        for _ in range(LINE_SEARCH_HALVINGS):
            trial = w + t * step
            if np.all(trial > 0):
                trial_raw, trial_scaled = scaled(trial)
                if np.linalg.norm(trial_scaled) <= (1.0 - 1e-4 * t) * merit:
                    break
            t *= 0.5
        else:
            raise SolverFailureError(
                "Newton line search failed", iteration=iteration, residual=residual
            )
        w, raw, f_scaled = trial, trial_raw, trial_scaled
        residual = float(np.max(np.abs(raw / a.row_scale)))
    if residual <= tol:
        return ConformalFactor(w), max_iter, residual
    raise NonConvergenceError("Damped Newton exceeded max_iter", residual=residual)


def uniqueness_hypotheses(bg: SmmsBackground) -> Dict[str, bool]:
    """Sign hypotheses under which the only solution is ``w = 1``.

    Either ``H <= 0`` with ``lambda1(Lbar, Bbar) >= 0``, or the sign-only version
    ``R <= 0``, ``H <= 0``.
    """
    h = smms_core.weighted_mean_curvature(bg)
    r = smms_core.weighted_scalar_curvature(bg)
    bar = spectral.first_eigen_barLbarB(bg)
    h_ok = bool(np.all(h <= SIGN_TOL))
    return {
        "H_nonpositive": h_ok,
        "lambda1_bar_nonnegative": bool(bar.lambda1 >= -SIGN_TOL),
        "R_nonpositive": bool(np.all(r <= SIGN_TOL)),
    }


def uniqueness_probe(
    bg: SmmsBackground,
    starts: Optional[Sequence[NodalField]] = None,
    count: int = 10,
    seed: Optional[int] = None,
    tol: float = 1e-6,
) -> UniquenessReport:
    """Damped Newton from several positive starts; all should land on ``w = 1``.

    Default starts are smooth random fields with values in ``[0.5, 2]``.
    """
    if starts is None:
        rng = np.random.default_rng(settings.seed if seed is None else seed)
        starts = [
            domain_grid.smooth_random_field(bg.domain, rng, 0.5, 2.0) for _ in range(count)
        ]

    def run(start: NodalField) -> Tuple[bool, float]:
        try:
            w, _, _ = damped_newton(bg, start, tol=min(tol, settings.solver_tol))
        except SolverFailureError as exc:
            logger.warning("uniqueness_start_failed", detail=exc.detail)
            return False, float("inf")
        distance = float(np.max(np.abs(w.w - 1.0)))
        return distance <= tol, distance

    with ThreadPoolExecutor(max_workers=settings.threads) as pool:
        outcomes = list(pool.map(run, starts))
    report = UniquenessReport(
        converged=[ok for ok, _ in outcomes],
        distances=[d for _, d in outcomes],
        hypotheses=uniqueness_hypotheses(bg),
    )
    logger.info("uniqueness_probe_done", starts=len(outcomes), all_unit=report.all_unit)
    return report


# Orchestration


def find_smaller_metric(
    bg: SmmsBackground,
    epsilon: float = 0.5,
    delta: float = 0.5,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    newton_check: bool = True,
) -> SmallerMetricResult:
    """Conformal factor ``0 < w < 1`` with unchanged weighted curvatures, or a refusal.

    The refusal lists every failed hypothesis among ``H_nonpositive``, ``lambda1_LB_negative``
    and ``lambda1_bar_negative``.
    """
    tol = tol or settings.solver_tol
    max_iter = max_iter or settings.solver_max_iter
    lb = spectral.first_eigen_LB(bg)
    bar = spectral.first_eigen_barLbarB(bg)
    h = smms_core.weighted_mean_curvature(bg)
    hypotheses = {
        "H_nonpositive": bool(np.all(h <= SIGN_TOL)),
        "lambda1_LB_negative": lb.lambda1 < 0,
        "lambda1_bar_negative": bar.lambda1 < 0,
    }
    failed = [name for name, ok in hypotheses.items() if not ok]
    if failed:
        logger.warning("smaller_metric_refused", failed=failed)
        return SmallerMetricResult(
            hypotheses=hypotheses,
            lambda1_LB=lb.lambda1,
            lambda1_bar=bar.lambda1,
            residual=None,
            iterations=0,
            failed=failed,
        )

    lower, epsilon = _lower_with_epsilon(bg, epsilon, lb)
    upper, delta = _upper_with_delta(bg, delta, bar)
    halvings = 0
    while np.any(lower > upper):
        if halvings >= settings.max_halvings:
            raise ConstructionFailureError("Lower solution stays above upper solution")
        lower, epsilon = _lower_with_epsilon(bg, 0.5 * epsilon, lb)
        halvings += 1

    gamma, rho = choose_gamma_rho(bg)
    cfg = SolverConfig(
        gamma=gamma,
        rho=rho,
        epsilon=epsilon,
        delta=delta,
        alpha=1.0 - epsilon ** (2.0 / (bg.total_dim - 2.0)),
        tol=tol,
        max_iter=max_iter,
    )
    solver = MonotoneSolver(bg, cfg)
    solution = solver.iterate(lower, upper)

    newton_deviation = None
    if newton_check:
        start = 0.5 * (solution.w + upper)
        newton, _, _ = damped_newton(bg, start, tol=0.1 * tol)
        newton_deviation = float(np.max(np.abs(newton.w - solution.w)))

    residual = smms_core.residual_norm(bg, solution)
    logger.info(
        "smaller_metric_found",
        iterations=len(solver.history),
        residual=residual,
        epsilon=epsilon,
        delta=delta,
        newton_deviation=newton_deviation,
    )
    return SmallerMetricResult(
        hypotheses=hypotheses,
        lambda1_LB=lb.lambda1,
        lambda1_bar=bar.lambda1,
        residual=residual,
        iterations=len(solver.history),
        failed=[],
        solution=solution.w,
        epsilon=epsilon,
        delta=delta,
        newton_deviation=newton_deviation,
        history=solver.history,
    )
