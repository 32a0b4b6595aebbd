"""Weighted Yamabe flows with boundary, energy diagnostics and gradient-soliton checks.

The flows evolve the conformal factor of ``g(t) = w^{4/(N-2)} g0`` at every node that is not
on the trace boundary; boundary values are eliminated after each Runge-Kutta stage so that
``B w = 0``, which is ``H^m_{phi(t)} = 0`` in the evolving geometry.
"""
from math import ceil
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import structlog
from scipy.interpolate import CubicHermiteSpline

from smms_lab.config import settings
from smms_lab.exceptions import BoundaryClosureError, InvalidInputError, StepSizeError
from smms_lab.models import (
    FlowState,
    FlowTrace,
    NodalField,
    ReparametrizationReport,
    SolitonReport,
)
from smms_lab.services import domain_grid, smms_core
from smms_lab.services.smms_core import ConformalFactor, SmmsBackground, positive_power

logger = structlog.get_logger()

# Relative size of the O(h^2) bound on the two energy paths before a warning
ENERGY_CONSISTENCY_FACTOR = 10.0


def _boundary_correct(bg: SmmsBackground, w: NodalField) -> NodalField:
    """Solve the one-sided Robin row ``B w = 0`` for the boundary values."""
    d = bg.domain
    b = d.boundary_index
    h = smms_core.weighted_mean_curvature(bg)
    half_c = 0.5 * bg.c_coef
    two_h = 2.0 * d.boundary_spacing
    denominator = half_c * 3.0 / two_h + h
    if np.any(denominator <= 0):
        raise BoundaryClosureError(
            "Robin closure is singular for this H and grid spacing",
            min_denominator=float(np.min(denominator)),
        )
    out = w.copy()
    out[b] = half_c * (4.0 * w[d.boundary_inner1] - w[d.boundary_inner2]) / two_h / denominator
    return out


def _check_positive(w: NodalField, time: float) -> None:
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        logger.error("flow_positivity_lost", time=time)
        raise StepSizeError(time=time, min_value=float(np.nanmin(w)))


def _curvature_rate(bg: SmmsBackground, w: NodalField) -> NodalField:
    """``-(1/k) w^{-k} L w``, zero on the trace boundary."""
    rate = -positive_power(w, -bg.k_exp) * smms_core.apply_L(bg, w) / bg.k_exp
    rate[bg.domain.boundary_index] = 0.0
    return np.asarray(rate, dtype=np.float64)


def _normalized_rate(bg: SmmsBackground, w: NodalField) -> NodalField:
    rate = _curvature_rate(bg, w) + average_scalar(bg, w) * w / bg.k_exp
    rate[bg.domain.boundary_index] = 0.0
    return np.asarray(rate, dtype=np.float64)


Rate = Callable[[SmmsBackground, NodalField], NodalField]


def _rk4(bg: SmmsBackground, w: NodalField, dt: float, rate: Rate, time: float) -> NodalField:
    k1 = rate(bg, w)
    stage = _boundary_correct(bg, w + 0.5 * dt * k1)
    _check_positive(stage, time)
    k2 = rate(bg, stage)
    stage = _boundary_correct(bg, w + 0.5 * dt * k2)
    _check_positive(stage, time)
    k3 = rate(bg, stage)
    stage = _boundary_correct(bg, w + dt * k3)
    _check_positive(stage, time)
    k4 = rate(bg, stage)
    out = _boundary_correct(bg, w + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    _check_positive(out, time + dt)
    return out


def _boundary_residual(bg: SmmsBackground, w: NodalField) -> float:
    residual = smms_core.apply_B(bg, w)
    return float(np.max(np.abs(residual))) if residual.size else 0.0


def _step(state: FlowState, dt: float, rate: Rate) -> FlowState:
    if dt <= 0:
        raise InvalidInputError("dt must be positive", dt=dt)
    bg = state.bg
    w = _rk4(bg, _boundary_correct(bg, state.w.w), dt, rate, state.time)
    residual = _boundary_residual(bg, w)
    if residual > settings.flow_boundary_tol:
        raise BoundaryClosureError(residual=residual, time=state.time + dt)
    return FlowState(w=ConformalFactor(w), time=state.time + dt, bg=bg)


def step_unnormalized(state: FlowState, dt: float) -> FlowState:
    """One RK4 step of ``dw/dt = -(N-2)/4 R^m_phi w``."""
    return _step(state, dt, _curvature_rate)


def step_normalized(state: FlowState, dt: float) -> FlowState:
    """One RK4 step of ``dw/dt = (N-2)/4 (r^m_phi - R^m_phi) w``."""
    return _step(state, dt, _normalized_rate)


# Diagnostics


def average_scalar(bg: SmmsBackground, w: "ConformalFactor | NodalField") -> float:
    """``r^m_phi``, the average of ``R^m_phi`` against the evolved weighted volume."""
    r_new, _, vol_weight, _ = smms_core.conformal_transform(bg, w)
    volume = domain_grid.integrate_volume(bg.domain, vol_weight, bg.density)
    return domain_grid.integrate_volume(bg.domain, r_new * vol_weight, bg.density) / volume


def weighted_volume(bg: SmmsBackground, w: "ConformalFactor | NodalField") -> float:
    """``int e^{-phi} dV_g`` of the conformal SMMS."""
    _, _, vol_weight, _ = smms_core.conformal_transform(bg, w)
    return domain_grid.integrate_volume(bg.domain, vol_weight, bg.density)


def energy_paths(bg: SmmsBackground, w: "ConformalFactor | NodalField") -> Tuple[float, float]:
    """``E(w)`` as the Dirichlet form and as the curvature integral of the conformal SMMS.

    The two agree exactly on compact domains and differ by the truncation-face flux otherwise.
    """
    values = ConformalFactor(smms_core.as_field(w)).w
    dirichlet = float(values @ (smms_core.energy_matrix(bg) @ values))
    r_new, h_new, vol_weight, area_weight = smms_core.conformal_transform(bg, values)
    curvature = domain_grid.integrate_volume(bg.domain, r_new * vol_weight, bg.density)
    curvature += 2.0 * domain_grid.integrate_boundary(
        bg.domain, h_new * area_weight, bg.boundary_density
    )
    return dirichlet, curvature


def energy_E(bg: SmmsBackground, w: "ConformalFactor | NodalField") -> float:
    """Total weighted curvature ``int R e^{-phi} dV + 2 oint H e^{-phi} dA`` of the conformal SMMS.

    Returns the Dirichlet-form value and warns when the curvature path disagrees beyond the
    discretization bound.
    """
    dirichlet, curvature = energy_paths(bg, w)
    discrepancy = abs(dirichlet - curvature)
    bound = ENERGY_CONSISTENCY_FACTOR * bg.domain.spacing**2 * max(1.0, abs(dirichlet))
    if discrepancy > bound:
        logger.warning(
            "energy_paths_disagree", dirichlet=dirichlet, curvature=curvature, bound=bound
        )
    return dirichlet


def energy_Etilde(bg: SmmsBackground, w: "ConformalFactor | NodalField") -> float:
    """Scale-invariant energy ``E(w) / V(w)^{(N-2)/N}``."""
    big = bg.total_dim
    return energy_E(bg, w) / weighted_volume(bg, w) ** ((big - 2.0) / big)


def conformal_metric_data(
    bg: SmmsBackground, w: "ConformalFactor | NodalField"
) -> Dict[str, NodalField]:
    """Nodal data of the SMMS ``(w^{4/(N-2)} g0, w^{2m/(N-2)} e^{-phi0})``.

    Keys: ``metric_factor``, ``density``, ``R``, ``vol_weight`` on nodes and ``H``,
    ``area_weight`` on boundary nodes.
    """
    r_new, h_new, vol_weight, area_weight = smms_core.conformal_transform(bg, w)
    values = smms_core.as_field(w)
    return {
        "metric_factor": positive_power(values, bg.k_exp),
        "density": positive_power(values, 2.0 * bg.dim_m / (bg.total_dim - 2.0)) * bg.density,
        "R": r_new,
        "vol_weight": vol_weight,
        "H": h_new,
        "area_weight": area_weight,
    }


def _sample(trace: FlowTrace, bg: SmmsBackground, w: NodalField, time: float) -> float:
    dirichlet, curvature = energy_paths(bg, w)
    big = bg.total_dim
    volume = weighted_volume(bg, w)
    r_new, _, _, _ = smms_core.conformal_transform(bg, w)
    inner = r_new[bg.domain.interior_index]
    trace.append(
        times=time,
        energy=dirichlet,
        energy_tilde=dirichlet / volume ** ((big - 2.0) / big),
        volume=volume,
        average_scalar=average_scalar(bg, w),
        max_scalar=float(np.max(inner)),
        min_scalar=float(np.min(inner)),
        boundary_residual=_boundary_residual(bg, w),
        energy_discrepancy=abs(dirichlet - curvature),
    )
    return dirichlet


def _step_count(t_end: float, dt: float) -> int:
    if t_end <= 0 or dt <= 0:
        raise InvalidInputError("t_end and dt must be positive", t_end=t_end, dt=dt)
    return max(1, ceil(t_end / dt - 1e-9))


def integrate(
    state: FlowState,
    t_end: float,
    dt: float,
    normalized: bool = False,
    sample_every: int = 10,
) -> Tuple[FlowTrace, FlowState]:
    """Integrate a flow to ``state.time + t_end``, sampling every ``sample_every`` steps.

    Raises:
        StepSizeError: positivity was lost or the energy left the watchdog envelope.
    """
    step = step_normalized if normalized else step_unnormalized
    steps = _step_count(t_end, dt)
    t_final = state.time + t_end
    trace = FlowTrace()
    bg = state.bg
    state = FlowState(ConformalFactor(_boundary_correct(bg, state.w.w)), state.time, bg)
    e0 = _sample(trace, bg, state.w.w, state.time)
    limit = settings.energy_growth_limit * max(abs(e0), 1.0)
    for index in range(1, steps + 1):
        h = min(dt, t_final - state.time)
        state = step(state, h)
        if index % sample_every == 0 or index == steps:
            energy = _sample(trace, bg, state.w.w, state.time)
            if abs(energy - e0) > limit:
                logger.error("flow_energy_watchdog", time=state.time, energy=energy)
                raise StepSizeError(
                    "Energy left the watchdog envelope, reduce dt", time=state.time, energy=energy
                )
    logger.info(
        "flow_finished",
        normalized=normalized,
        steps=steps,
        t_end=state.time,
        samples=len(trace.times),
    )
    return trace, state


def run_unnormalized(
    state: FlowState, t_end: float, dt: float, sample_every: int = 10
) -> FlowTrace:
    return integrate(state, t_end, dt, normalized=False, sample_every=sample_every)[0]


def run_normalized(state: FlowState, t_end: float, dt: float, sample_every: int = 10) -> FlowTrace:
    return integrate(state, t_end, dt, normalized=True, sample_every=sample_every)[0]


# Reparametrization


def reparametrization_check(
    bg: SmmsBackground, w0: "ConformalFactor | NodalField", t_end: float, dt: float
) -> ReparametrizationReport:
    """Compare the rescaled unnormalized flow with an independently run normalized flow.

    Along the unnormalized flow ``psi' = r psi`` and ``t_tilde' = psi`` are integrated in the
    same RK4 stages; ``psi^{(N-2)/4} w`` is then interpolated (cubic Hermite in t_tilde) onto the
    normalized flow's time grid.
    """
    k = bg.k_exp
    w = _boundary_correct(bg, ConformalFactor(smms_core.as_field(w0)).w)

    def augmented(u: NodalField) -> Tuple[NodalField, float]:
        return _curvature_rate(bg, u), average_scalar(bg, u)

    steps = _step_count(t_end, dt)
    psi, tau, time = 1.0, 0.0, 0.0
    taus: List[float] = [0.0]
    profiles: List[NodalField] = [w.copy()]
    slopes: List[NodalField] = [_boundary_correct(bg, _normalized_rate(bg, w))]
    for _ in range(steps):
        h = min(dt, t_end - time)
        k1, r1 = augmented(w)
        s2 = _boundary_correct(bg, w + 0.5 * h * k1)
        _check_positive(s2, time)
        p2 = psi + 0.5 * h * r1 * psi
        k2, r2 = augmented(s2)
        s3 = _boundary_correct(bg, w + 0.5 * h * k2)
        _check_positive(s3, time)
        p3 = psi + 0.5 * h * r2 * p2
        k3, r3 = augmented(s3)
        s4 = _boundary_correct(bg, w + h * k3)
        _check_positive(s4, time)
        p4 = psi + h * r3 * p3
        k4, r4 = augmented(s4)
        w = _boundary_correct(bg, w + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        _check_positive(w, time + h)
        tau += h / 6.0 * (psi + 2.0 * p2 + 2.0 * p3 + p4)
        psi += h / 6.0 * (r1 * psi + 2.0 * r2 * p2 + 2.0 * r3 * p3 + r4 * p4)
        time += h
        scale = psi ** (1.0 / k)
        taus.append(tau)
        profiles.append(scale * w)
        # d/dtau (psi^{1/k} w) = psi^{1/k - 1} (dw/dt + r w / k); boundary values follow the
        # linear Robin elimination
        slopes.append(scale / psi * _boundary_correct(bg, _normalized_rate(bg, w)))

    spline = CubicHermiteSpline(np.array(taus), np.vstack(profiles), np.vstack(slopes), axis=0)
    reference = FlowState(ConformalFactor(profiles[0]), 0.0, bg)
    normalized_steps = _step_count(tau, dt)
    deviation = 0.0
    samples = 0
    for _ in range(normalized_steps):
        h = min(dt, tau - reference.time)
        if h <= 0:
            break
        reference = step_normalized(reference, h)
        deviation = max(
            deviation, float(np.max(np.abs(spline(reference.time) - reference.w.w)))
        )
        samples += 1
    logger.info(
        "reparametrization_checked", deviation=deviation, t_tilde_end=tau, psi_end=psi
    )
    return ReparametrizationReport(
        deviation=deviation, t_end=t_end, t_tilde_end=tau, samples=samples, psi_end=psi
    )


# Solitons


def check_gradient_soliton(
    bg: SmmsBackground, f: NodalField, lambda_value: float
) -> SolitonReport:
    """Max-norm residuals of the gradient-soliton system for the potential ``f``.

    Hessian rows compare every available second-derivative component with
    ``(lambda - R) g0``; the gradient row ``<grad f, grad phi0> = m (R - lambda)`` is skipped
    when ``m = 0``.
    """
    f = np.asarray(f, dtype=np.float64)
    d = bg.domain
    r = smms_core.weighted_scalar_curvature(bg)
    target = lambda_value - r
    hessian = 0.0
    for values, diagonal in domain_grid.hessian_components(d, f).values():
        defect = values - target if diagonal else values
        hessian = max(hessian, float(np.max(np.abs(defect))))
    gradient: Optional[float] = None
    if bg.dim_m > 0:
        coupling = domain_grid.gradient_inner(d, f, bg.phi0)
        gradient = float(np.max(np.abs(coupling - bg.dim_m * (r - lambda_value))))
    h = smms_core.weighted_mean_curvature(bg)
    normal = domain_grid.normal_derivative(d, f)
    volume = domain_grid.integrate_volume(d, np.ones(d.node_count), bg.density)
    report = SolitonReport(
        hessian_residual=hessian,
        gradient_residual=gradient,
        mean_curvature_residual=float(np.max(np.abs(h))) if h.size else 0.0,
        normal_residual=float(np.max(np.abs(normal))) if normal.size else 0.0,
        lambda_value=float(lambda_value),
        scalar_curvature_mean=domain_grid.integrate_volume(d, r, bg.density) / volume,
    )
    logger.info("soliton_checked", **report.to_dict())
    return report


def example_soliton_background(
    slope: float = 0.3,
    dim_m: float = 1.0,
    counts: Tuple[int, int, int] = (9, 9, 9),
    extents: Tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> Tuple[SmmsBackground, NodalField, float]:
    """Flat half-space box with ``phi0 = slope * x2``, potential ``f = x1`` and its lambda.

    ``R^m_phi0 = -(m+1)/m slope^2`` is constant and ``H^m_phi0 = 0``, so ``f`` is a gradient
    soliton potential with ``lambda = R``.
    """
    if dim_m <= 0:
        raise InvalidInputError("The sloped-potential soliton needs m > 0", dim_m=dim_m)
    domain = domain_grid.build_halfspace_box_domain(*counts, *extents, dim_m=dim_m)
    phi0 = slope * domain.coordinate("x2")
    bg = smms_core.make_background(domain, phi0=phi0)
    lambda_value = -(dim_m + 1.0) / dim_m * slope**2
    return bg, domain.coordinate("x1"), lambda_value
