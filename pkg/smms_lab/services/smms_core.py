"""Smooth metric measure spaces with boundary and their conformal operators.

Conventions: ``N = n + m``, ``c = 4(N-1)/(N-2)``, ``k = 4/(N-2)``. The conformal factor ``w``
realizes ``g = w^k g0`` and ``e^{-phi} = w^{2m/(N-2)} e^{-phi0}``. Mean curvature is the trace
of the second fundamental form with respect to the outward normal (``n - 1`` on the unit sphere).
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
import structlog

from smms_lab.exceptions import InvalidInputError, PositivityError
from smms_lab.models import BoundaryField, NodalField
from smms_lab.services import domain_grid
from smms_lab.services.domain_grid import DiscreteDomain

logger = structlog.get_logger()

# Max-norm below which phi0 counts as identically zero
ZERO_TOL = 1e-12


@dataclass(frozen=True)
class SmmsBackground:
    """The data ``(n, m, phi0, R_g0, H_g0)`` on a discrete domain.

    ``metric_log_factor`` (sigma, ``g = e^{2 sigma} g_grid``) is only set on explicitly
    transformed backgrounds and is honored by the curvature evaluations alone.
    """

    domain: DiscreteDomain
    dim_n: int
    dim_m: float
    phi0: NodalField
    R_g0: NodalField
    H_g0: BoundaryField
    metric_log_factor: Optional[NodalField] = None

    def __post_init__(self) -> None:
        d = self.domain
        for name, values, size in (
            ("phi0", self.phi0, d.node_count),
            ("R_g0", self.R_g0, d.node_count),
            ("H_g0", self.H_g0, d.boundary_count),
        ):
            if np.shape(values) != (size,):
                raise InvalidInputError(f"{name} must have {size} values", got=np.shape(values))
            if not np.all(np.isfinite(values)):
                raise InvalidInputError(f"{name} has non-finite values")
        if self.dim_m < 0:
            raise InvalidInputError("dim_m must be nonnegative", dim_m=self.dim_m)
        if self.dim_n + self.dim_m <= 2:
            raise InvalidInputError("n + m must exceed 2", n=self.dim_n, m=self.dim_m)
        if self.dim_m == 0 and float(np.max(np.abs(self.phi0))) > ZERO_TOL:
            raise InvalidInputError("m = 0 requires phi0 identically zero")
        if not np.all(np.isfinite(np.exp(-self.phi0))) or np.any(np.exp(-self.phi0) <= 0):
            raise InvalidInputError("e^{-phi0} must be finite and positive")

    @property
    def total_dim(self) -> float:
        return self.dim_n + self.dim_m

    @property
    def c_coef(self) -> float:
        """``4(N-1)/(N-2)``, the Laplacian coefficient of L."""
        big_n = self.total_dim
        return 4.0 * (big_n - 1.0) / (big_n - 2.0)

    @property
    def k_exp(self) -> float:
        """``4/(N-2)``, the metric exponent of the conformal factor."""
        return 4.0 / (self.total_dim - 2.0)

    @property
    def q_exp(self) -> float:
        """Interior critical exponent ``(N+2)/(N-2)``."""
        return (self.total_dim + 2.0) / (self.total_dim - 2.0)

    @property
    def q_boundary_exp(self) -> float:
        """Boundary critical exponent ``N/(N-2)``."""
        return self.total_dim / (self.total_dim - 2.0)

    @property
    def density(self) -> NodalField:
        """``e^{-phi0}`` at the nodes."""
        return np.exp(-self.phi0)

    @property
    def boundary_density(self) -> BoundaryField:
        return np.exp(-self.phi0[self.domain.boundary_index])

    def require_flat_metric(self) -> None:
        if self.metric_log_factor is not None:
            raise InvalidInputError(
                "Operators are defined on the grid metric; use the original background"
            )


@dataclass(frozen=True)
class ConformalFactor:
    """Strictly positive conformal factor ``w``."""

    w: NodalField

    def __post_init__(self) -> None:
        values = np.asarray(self.w, dtype=np.float64)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise PositivityError("Conformal factor must be a finite 1-D field")
        if np.any(values <= 0):
            raise PositivityError(
                "Conformal factor must be strictly positive", min_value=float(np.min(values))
            )
        object.__setattr__(self, "w", values)


def make_background(
    domain: DiscreteDomain,
    phi0: Optional[NodalField] = None,
    R_g0: Optional[NodalField] = None,
    H_g0: Optional[BoundaryField] = None,
) -> SmmsBackground:
    """Background on ``domain`` with flat defaults (``R = 0``, ``H`` of the model boundary)."""
    from smms_lab.models import DomainKind

    default_h = float(domain.dim_n - 1) if domain.kind == DomainKind.RADIAL_BALL else 0.0
    return SmmsBackground(
        domain=domain,
        dim_n=domain.dim_n,
        dim_m=domain.dim_m,
        phi0=np.zeros(domain.node_count) if phi0 is None else np.asarray(phi0, dtype=np.float64),
        R_g0=np.zeros(domain.node_count) if R_g0 is None else np.asarray(R_g0, dtype=np.float64),
        H_g0=(
            np.full(domain.boundary_count, default_h)
            if H_g0 is None
            else np.asarray(H_g0, dtype=np.float64)
        ),
    )


def as_field(w: "ConformalFactor | NodalField") -> NodalField:
    return w.w if isinstance(w, ConformalFactor) else np.asarray(w, dtype=np.float64)


def _checked_positive(w: "ConformalFactor | NodalField") -> NodalField:
    return ConformalFactor(as_field(w)).w


# Weighted calculus


def weighted_laplacian(bg: SmmsBackground, u: NodalField) -> NodalField:
    """``Delta_phi u = Delta u - <grad phi, grad u>`` in divergence form."""
    return domain_grid.divergence_laplacian(bg.domain, np.asarray(u, dtype=np.float64), bg.density)


def _curvature_parts(
    bg: SmmsBackground,
) -> Tuple[NodalField, NodalField, NodalField, BoundaryField, BoundaryField]:
    """Metric scalar curvature, ``Delta_g phi``, ``|grad phi|^2_g``, ``H_g`` and ``dphi/dnu_g``."""
    d = bg.domain
    n = bg.dim_n
    phi = bg.phi0
    dnu_phi = domain_grid.normal_derivative(d, phi)
    if bg.metric_log_factor is None:
        return (
            bg.R_g0,
            domain_grid.laplacian(d, phi),
            domain_grid.gradient_inner(d, phi, phi),
            bg.H_g0,
            dnu_phi,
        )
    sigma = bg.metric_log_factor
    e2 = np.exp(-2.0 * sigma)
    grad_sigma_sq = domain_grid.gradient_inner(d, sigma, sigma)
    scalar = e2 * (
        bg.R_g0
        - 2.0 * (n - 1) * domain_grid.laplacian(d, sigma)
        - (n - 2) * (n - 1) * grad_sigma_sq
    )
    lap_phi = e2 * (
        domain_grid.laplacian(d, phi) + (n - 2) * domain_grid.gradient_inner(d, sigma, phi)
    )
    grad_phi_sq = e2 * domain_grid.gradient_inner(d, phi, phi)
    e1 = np.exp(-sigma[d.boundary_index])
    mean = e1 * (bg.H_g0 + (n - 1) * domain_grid.normal_derivative(d, sigma))
    return scalar, lap_phi, grad_phi_sq, mean, e1 * dnu_phi


def weighted_scalar_curvature(bg: SmmsBackground) -> NodalField:
    """``R^m_phi = R_g + 2 Delta_g phi - (m+1)/m |grad phi|^2_g``, ``R_g`` when ``m = 0``."""
    scalar, lap_phi, grad_phi_sq, _, _ = _curvature_parts(bg)
    if bg.dim_m == 0:
        return np.array(scalar, dtype=np.float64)
    m = bg.dim_m
    return np.asarray(scalar + 2.0 * lap_phi - (m + 1.0) / m * grad_phi_sq, dtype=np.float64)


def weighted_mean_curvature(bg: SmmsBackground) -> BoundaryField:
    """``H^m_phi = H_g - dphi/dnu_g`` on the boundary nodes, outward normal.

    The minus sign flips the common ``H_g + dphi/dnu`` convention. It is the first variation of
    the weighted area ``e^{-phi} dA_g`` and the only sign for which
    ``H^m_phi = w^{-N/(N-2)} B^m_{phi0} w`` holds under the measure change
    ``e^{-phi} = w^{2m/(N-2)} e^{-phi0}``; with the plus sign that law fails.
    """
    _, _, _, mean, dnu_phi = _curvature_parts(bg)
    if bg.dim_m == 0:
        return np.array(mean, dtype=np.float64)
    return np.asarray(mean - dnu_phi, dtype=np.float64)


# Conformal operators


def apply_L(bg: SmmsBackground, w: NodalField) -> NodalField:
    """``L^m_phi w = -c Delta_phi w + R^m_phi w`` at every node."""
    bg.require_flat_metric()
    w = as_field(w)
    return bg.c_coef * -weighted_laplacian(bg, w) + weighted_scalar_curvature(bg) * w


def apply_B(bg: SmmsBackground, w: NodalField) -> BoundaryField:
    """``B^m_phi w = (c/2) dw/dnu + H^m_phi w`` at the boundary nodes."""
    bg.require_flat_metric()
    w = as_field(w)
    b = bg.domain.boundary_index
    return np.asarray(
        0.5 * bg.c_coef * domain_grid.normal_derivative(bg.domain, w)
        + weighted_mean_curvature(bg) * w[b],
        dtype=np.float64,
    )


def apply_Lbar(bg: SmmsBackground, u: NodalField) -> NodalField:
    """``-Delta_phi u - R^m_phi u / (N-1)``."""
    bg.require_flat_metric()
    u = as_field(u)
    return -weighted_laplacian(bg, u) - weighted_scalar_curvature(bg) * u / (bg.total_dim - 1.0)


def apply_Bbar(bg: SmmsBackground, u: NodalField) -> BoundaryField:
    """``du/dnu - H^m_phi u / (N-1)``."""
    bg.require_flat_metric()
    u = as_field(u)
    b = bg.domain.boundary_index
    return np.asarray(
        domain_grid.normal_derivative(bg.domain, u)
        - weighted_mean_curvature(bg) * u[b] / (bg.total_dim - 1.0),
        dtype=np.float64,
    )


def conformal_transform(
    bg: SmmsBackground, w: "ConformalFactor | NodalField"
) -> Tuple[NodalField, BoundaryField, NodalField, BoundaryField]:
    """Curvatures and measure multipliers of the SMMS conformal to ``bg`` through ``w``.

    Returns:
        ``(R_new, H_new, vol_weight, area_weight)`` with ``R_new = w^{-(N+2)/(N-2)} L w``,
        ``H_new = w^{-N/(N-2)} B w``, ``vol_weight = w^{2N/(N-2)}`` and
        ``area_weight = w^{2(N-1)/(N-2)}``.
    """
    values = _checked_positive(w)
    big_n = bg.total_dim
    log_w = np.log(values)
    wb = log_w[bg.domain.boundary_index]
    r_new = np.exp(-bg.q_exp * log_w) * apply_L(bg, values)
    h_new = np.exp(-bg.q_boundary_exp * wb) * apply_B(bg, values)
    vol_weight = np.exp(2.0 * big_n / (big_n - 2.0) * log_w)
    area_weight = np.exp(2.0 * (big_n - 1.0) / (big_n - 2.0) * wb)
    return r_new, h_new, vol_weight, area_weight


def transformed_background(bg: SmmsBackground, w: "ConformalFactor | NodalField") -> SmmsBackground:
    """The explicitly transformed SMMS ``(w^k g0, phi0 - 2m/(N-2) log w)``.

    Its curvature evaluations follow the conformally flat formulas and must agree with
    :func:`conformal_transform` up to discretization error.
    """
    bg.require_flat_metric()
    values = _checked_positive(w)
    big_n = bg.total_dim
    sigma = 2.0 / (big_n - 2.0) * np.log(values)
    return SmmsBackground(
        domain=bg.domain,
        dim_n=bg.dim_n,
        dim_m=bg.dim_m,
        phi0=bg.phi0 - bg.dim_m * sigma,
        R_g0=bg.R_g0,
        H_g0=bg.H_g0,
        metric_log_factor=sigma,
    )


# Assembled forms


def mass_weights(bg: SmmsBackground) -> NodalField:
    """Lumped weighted mass ``q_i e^{-phi0}``."""
    return np.asarray(bg.domain.quad_weight * bg.density, dtype=np.float64)


def boundary_mass_weights(bg: SmmsBackground) -> BoundaryField:
    """Boundary quadrature weights times ``e^{-phi0}``."""
    return np.asarray(bg.domain.boundary_weight * bg.boundary_density, dtype=np.float64)


def boundary_mass_matrix(
    bg: SmmsBackground, values: Optional[BoundaryField] = None
) -> sp.csr_matrix:
    """Node-sized diagonal carrying ``rho_boundary e^{-phi0} * values`` on boundary nodes."""
    diag = np.zeros(bg.domain.node_count)
    weights = boundary_mass_weights(bg)
    diag[bg.domain.boundary_index] = weights if values is None else weights * values
    return sp.diags(diag).tocsr()


def weighted_stiffness(bg: SmmsBackground) -> sp.csr_matrix:
    """``K_phi``, the quadrature of ``<grad u, grad v> e^{-phi0}``."""
    return domain_grid.stiffness_matrix(bg.domain, bg.density)


def energy_matrix(bg: SmmsBackground) -> sp.csr_matrix:
    """Symmetric matrix of ``E(u) = int(c|grad u|^2 + R u^2)e^{-phi} + 2 oint H u^2 e^{-phi}``."""
    bg.require_flat_metric()
    r_weighted = weighted_scalar_curvature(bg)
    h_weighted = weighted_mean_curvature(bg)
    return (
        bg.c_coef * weighted_stiffness(bg)
        + sp.diags(mass_weights(bg) * r_weighted)
        + 2.0 * boundary_mass_matrix(bg, h_weighted)
    ).tocsr()


def positive_power(values: NodalField, exponent: float) -> NodalField:
    """``values**exponent`` through log space for nonnegative values, 0 where values are 0."""
    values = np.asarray(values, dtype=np.float64)
    positive = values > 0
    safe = np.where(positive, values, 1.0)
    return np.where(positive, np.exp(exponent * np.log(safe)), 0.0)


def yamabe_residual(
    bg: SmmsBackground, w: "ConformalFactor | NodalField"
) -> Tuple[NodalField, BoundaryField]:
    """Defects of ``L w = R w^{(N+2)/(N-2)}`` and ``B w = H w^{N/(N-2)}``.

    Interior entries are pointwise defects at interior nodes (boundary entries 0). Boundary
    entries are the control-volume balance of a boundary node, the Robin defect plus the
    interior defect over the half cell, which is what the assembled solvers drive to zero.
    """
    values = _checked_positive(w)
    d = bg.domain
    b = d.boundary_index
    r_weighted = weighted_scalar_curvature(bg)
    h_weighted = weighted_mean_curvature(bg)
    interior_defect = apply_L(bg, values) - r_weighted * positive_power(values, bg.q_exp)
    robin_defect = apply_B(bg, values) - h_weighted * positive_power(values[b], bg.q_boundary_exp)
    interior = interior_defect.copy()
    interior[b] = 0.0
    boundary = robin_defect + d.quad_weight[b] * interior_defect[b] / (2.0 * d.boundary_weight)
    return interior, np.asarray(boundary, dtype=np.float64)


def residual_norm(bg: SmmsBackground, w: "ConformalFactor | NodalField") -> float:
    """Max norm over both parts of :func:`yamabe_residual`."""
    interior, boundary = yamabe_residual(bg, w)
    return float(max(np.max(np.abs(interior)), np.max(np.abs(boundary))))
