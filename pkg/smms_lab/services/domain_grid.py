"""Structured grids for the model geometries and the discrete calculus on them.

All domains are tensor products of uniform axes. Each axis carries a measure density
(``1``, ``r^{n-1}`` or ``r^{n-2}`` up to sphere areas) and every node owns a dual cell, so
quadrature is the exact integral of the density over the cell. The Laplacian is the
finite-volume divergence ``(1/rho) d(rho du)`` closed at the trace boundary by a second-order
one-sided normal derivative, which keeps the discrete Green identity exact on compact domains.
"""
from dataclasses import dataclass, field
from math import gamma, pi
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import structlog
from numpy.typing import NDArray

from smms_lab.exceptions import InvalidDomainError
from smms_lab.models import BoundaryField, DomainKind, NodalField

logger = structlog.get_logger()


def sphere_area(d: int) -> float:
    """Area of the unit d-sphere, ``2 pi^{(d+1)/2} / Gamma((d+1)/2)``."""
    return float(2.0 * pi ** ((d + 1) / 2.0) / gamma((d + 1) / 2.0))


@dataclass(frozen=True)
class GridAxis:
    """One uniform axis of a tensor grid.

    Attributes:
        name: Coordinate name (``x``, ``r``, ``t``, ``x1``, ``x2``).
        coords: Node coordinates.
        spacing: Uniform spacing h.
        density: Measure density at the nodes.
        cell: Exact integral of the density over each node's dual cell.
        edge_density: Density at the edge midpoints.
    """

    name: str
    coords: NDArray[np.float64]
    spacing: float
    density: NDArray[np.float64]
    cell: NDArray[np.float64]
    edge_density: NDArray[np.float64]

    @property
    def size(self) -> int:
        return int(self.coords.size)


@dataclass(frozen=True)
class GridFace:
    """A face of the tensor box (one end of one axis).

    ``trace`` faces form the boundary of the manifold. The others are truncation faces of a
    noncompact model; assembled quadratic forms treat them with homogeneous Neumann closure.
    """

    axis: int
    end: str
    trace: bool
    nodes: NDArray[np.int64]
    inner1: NDArray[np.int64]
    inner2: NDArray[np.int64]
    spacing: float
    weight: NDArray[np.float64]


@dataclass(frozen=True)
class DiscreteDomain:
    """A structured discretization of a model geometry.

    Nodes are flattened in C order over ``shape``. ``interior_index`` and ``boundary_index``
    partition the nodes; boundary quantities (``BoundaryField``) follow ``boundary_index`` order.
    """

    kind: DomainKind
    dim_n: int
    dim_m: float
    shape: Tuple[int, ...]
    axes: Tuple[GridAxis, ...]
    coords: NDArray[np.float64]
    measure_weight: NDArray[np.float64]
    quad_weight: NDArray[np.float64]
    interior_index: NDArray[np.int64]
    boundary_index: NDArray[np.int64]
    boundary_weight: NDArray[np.float64]
    boundary_inner1: NDArray[np.int64]
    boundary_inner2: NDArray[np.int64]
    boundary_spacing: float
    faces: Tuple[GridFace, ...]
    difference: sp.csr_matrix = field(repr=False)
    midpoint: sp.csr_matrix = field(repr=False)
    edge_weight: NDArray[np.float64] = field(repr=False)

    @property
    def node_count(self) -> int:
        return int(self.coords.shape[0])

    @property
    def boundary_count(self) -> int:
        return int(self.boundary_index.size)

    @property
    def spacing(self) -> float:
        """Largest grid spacing, the h of every O(h^2) statement."""
        return max(axis.spacing for axis in self.axes)

    @property
    def is_compact(self) -> bool:
        """True when every face is a trace face or carries zero measure."""
        return all(face.trace for face in self.faces)

    def coordinate(self, name: str) -> NDArray[np.float64]:
        """Nodal values of the named coordinate."""
        for index, axis in enumerate(self.axes):
            if axis.name == name:
                return np.asarray(self.coords[:, index], dtype=np.float64)
        raise InvalidDomainError(f"Domain {self.kind.value} has no coordinate {name!r}")

    def boundary_mask(self) -> NDArray[np.bool_]:
        mask = np.zeros(self.node_count, dtype=bool)
        mask[self.boundary_index] = True
        return mask

    def descriptor(self) -> Dict[str, Any]:
        """JSON descriptor ``{kind, n, m, counts, extents}``."""
        if self.kind == DomainKind.HALFSPACE_BOX:
            extents = [float(self.axes[0].coords[-1]), float(self.axes[1].coords[-1])]
            extents.append(float(self.axes[2].coords[-1]))
        else:
            extents = [float(axis.coords[-1]) for axis in self.axes]
        return {
            "kind": self.kind.value,
            "n": self.dim_n,
            "m": self.dim_m,
            "counts": list(self.shape),
            "extents": extents,
        }


# Axis construction


def _uniform_axis(
    name: str, lo: float, hi: float, count: int, scale: float, power: int
) -> GridAxis:
    """Axis with density ``scale * x^power`` and exact dual-cell integrals."""
    coords = np.linspace(lo, hi, count)
    h = float(coords[1] - coords[0])
    left = np.maximum(coords - h / 2.0, lo)
    right = np.minimum(coords + h / 2.0, hi)
    cell = scale * (right ** (power + 1) - left ** (power + 1)) / (power + 1)
    mid = 0.5 * (coords[:-1] + coords[1:])
    return GridAxis(
        name=name,
        coords=coords,
        spacing=h,
        density=scale * coords**power,
        cell=cell,
        edge_density=scale * mid**power,
    )


def _difference_1d(count: int) -> sp.csr_matrix:
    """Edge-by-node forward difference, row e holds ``u[e+1] - u[e]``."""
    ones = np.ones(count - 1)
    return sp.diags([-ones, ones], [0, 1], shape=(count - 1, count)).tocsr()


def _kron_all(factors: List[Any]) -> Any:
    result = factors[0]
    for factor in factors[1:]:
        result = sp.kron(result, factor) if sp.issparse(result) else np.kron(result, factor)
    return result


def _assemble(
    kind: DomainKind,
    dim_n: int,
    dim_m: float,
    axes: Tuple[GridAxis, ...],
    trace_ends: Tuple[Tuple[int, str], ...],
) -> DiscreteDomain:
    """Assemble quadrature, stiffness pieces and faces for a tensor grid."""
    shape = tuple(axis.size for axis in axes)
    grids = np.meshgrid(*[axis.coords for axis in axes], indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=1)
    measure = _kron_all([axis.density for axis in axes])
    quad = _kron_all([axis.cell for axis in axes])
    index = np.arange(int(np.prod(shape))).reshape(shape)

    # Difference and edge weight blocks, one per axis
    diffs, mids, weights = [], [], []
    for a, axis in enumerate(axes):
        eye = [sp.identity(other.size, format="csr") for other in axes]
        d1 = _difference_1d(axis.size)
        diffs.append(_kron_all([d1 if b == a else eye[b] for b in range(len(axes))]))
        mids.append(_kron_all([abs(d1) * 0.5 if b == a else eye[b] for b in range(len(axes))]))
        cells = [
            axis.edge_density / axis.spacing if b == a else axes[b].cell for b in range(len(axes))
        ]
        weights.append(_kron_all(cells))
    difference = sp.vstack(diffs).tocsr()
    midpoint = sp.vstack(mids).tocsr()
    edge_weight = np.concatenate(weights)

    faces: List[GridFace] = []
    for a, axis in enumerate(axes):
        for end in ("low", "high"):
            node_slice = 0 if end == "low" else axis.size - 1
            step = 1 if end == "low" else -1
            take = [slice(None)] * len(axes)
            take[a] = node_slice
            nodes = np.atleast_1d(index[tuple(take)]).ravel()
            take[a] = node_slice + step
            inner1 = np.atleast_1d(index[tuple(take)]).ravel()
            take[a] = node_slice + 2 * step
            inner2 = np.atleast_1d(index[tuple(take)]).ravel()
            transverse = [axes[b].cell for b in range(len(axes)) if b != a]
            face_weight = axis.density[node_slice] * (
                _kron_all(transverse) if transverse else np.ones(1)
            )
            if not np.any(face_weight > 0):
                continue
            faces.append(
                GridFace(
                    axis=a,
                    end=end,
                    trace=(a, end) in trace_ends,
                    nodes=nodes,
                    inner1=inner1,
                    inner2=inner2,
                    spacing=axis.spacing,
                    weight=np.asarray(face_weight, dtype=np.float64),
                )
            )

    trace_faces = [face for face in faces if face.trace]
    b_nodes = np.concatenate([face.nodes for face in trace_faces])
    order = np.argsort(b_nodes, kind="stable")
    boundary_index = b_nodes[order]
    if np.unique(boundary_index).size != boundary_index.size:
        raise InvalidDomainError("Trace faces overlap")
    interior_index = np.setdiff1d(np.arange(coords.shape[0]), boundary_index)

    return DiscreteDomain(
        kind=kind,
        dim_n=dim_n,
        dim_m=float(dim_m),
        shape=shape,
        axes=axes,
        coords=coords,
        measure_weight=np.asarray(measure, dtype=np.float64),
        quad_weight=np.asarray(quad, dtype=np.float64),
        interior_index=interior_index.astype(np.int64),
        boundary_index=boundary_index.astype(np.int64),
        boundary_weight=np.concatenate([face.weight for face in trace_faces])[order],
        boundary_inner1=np.concatenate([face.inner1 for face in trace_faces])[order],
        boundary_inner2=np.concatenate([face.inner2 for face in trace_faces])[order],
        boundary_spacing=float(trace_faces[0].spacing),
        faces=tuple(faces),
        difference=difference,
        midpoint=midpoint,
        edge_weight=edge_weight,
    )


def _check_m(dim_m: float) -> None:
    if dim_m < 0:
        raise InvalidDomainError("dim_m must be nonnegative", dim_m=dim_m)


# Builders


def build_interval_domain(
    node_count: int, length: float, dim_n: int, dim_m: float = 0.0
) -> DiscreteDomain:
    """Uniform grid on ``[0, length]`` with both ends as boundary.

    The interval is a one-dimensional surrogate: ``dim_n`` and ``dim_m`` only enter as PDE
    parameters.
    """
    if node_count < 3:
        raise InvalidDomainError("Interval needs at least 3 nodes", node_count=node_count)
    if length <= 0:
        raise InvalidDomainError("Interval length must be positive", length=length)
    _check_m(dim_m)
    axis = _uniform_axis("x", 0.0, float(length), node_count, 1.0, 0)
    domain = _assemble(DomainKind.INTERVAL, dim_n, dim_m, (axis,), ((0, "low"), (0, "high")))
    logger.debug("domain_built", **domain.descriptor())
    return domain


def build_radial_ball_domain(node_count: int, dim_n: int, dim_m: float = 0.0) -> DiscreteDomain:
    """Radial reduction of the unit ball, boundary node at ``r = 1``.

    The density ``|S^{n-1}| r^{n-1}`` vanishes at the axis, so the axis cell needs no closure
    and smooth radial fields automatically see ``u'(0) = 0``.
    """
    if dim_n < 3:
        raise InvalidDomainError("Radial ball requires dim_n >= 3", dim_n=dim_n)
    if node_count < 4:
        raise InvalidDomainError("Radial ball needs at least 4 nodes", node_count=node_count)
    _check_m(dim_m)
    axis = _uniform_axis("r", 0.0, 1.0, node_count, sphere_area(dim_n - 1), dim_n - 1)
    domain = _assemble(DomainKind.RADIAL_BALL, dim_n, dim_m, (axis,), ((0, "high"),))
    logger.debug("domain_built", **domain.descriptor())
    return domain


def build_halfspace_cylinder_domain(
    nr: int, nt: int, r_max: float, t_max: float, dim_n: int, dim_m: float = 0.0
) -> DiscreteDomain:
    """Truncated half-space in ``(r, t)`` for functions of ``(|x - x0|, t)``.

    The trace boundary is ``t = 0``; ``r = r_max`` and ``t = t_max`` are truncation faces.
    """
    if dim_n < 3:
        raise InvalidDomainError("Half-space cylinder requires dim_n >= 3", dim_n=dim_n)
    if nr < 4 or nt < 4:
        raise InvalidDomainError("Cylinder needs nr, nt >= 4", nr=nr, nt=nt)
    if r_max <= 0 or t_max <= 0:
        raise InvalidDomainError("Cylinder extents must be positive", r_max=r_max, t_max=t_max)
    _check_m(dim_m)
    r_axis = _uniform_axis("r", 0.0, float(r_max), nr, sphere_area(dim_n - 2), dim_n - 2)
    t_axis = _uniform_axis("t", 0.0, float(t_max), nt, 1.0, 0)
    domain = _assemble(
        DomainKind.HALFSPACE_CYLINDER, dim_n, dim_m, (r_axis, t_axis), ((1, "low"),)
    )
    logger.debug("domain_built", **domain.descriptor())
    return domain


def build_halfspace_box_domain(
    n1: int,
    n2: int,
    nt: int,
    x1_half: float,
    x2_half: float,
    t_max: float,
    dim_m: float = 0.0,
    dim_n: int = 3,
) -> DiscreteDomain:
    """Truncated three-dimensional half-space box ``[-a1, a1] x [-a2, a2] x [0, T]``.

    Used when data depend on two tangential coordinates (gradient-soliton checks).
    """
    if dim_n != 3:
        raise InvalidDomainError("Half-space box is only available for dim_n = 3", dim_n=dim_n)
    if min(n1, n2, nt) < 4:
        raise InvalidDomainError("Box needs at least 4 nodes per axis", counts=[n1, n2, nt])
    if min(x1_half, x2_half, t_max) <= 0:
        raise InvalidDomainError("Box extents must be positive")
    _check_m(dim_m)
    axes = (
        _uniform_axis("x1", -float(x1_half), float(x1_half), n1, 1.0, 0),
        _uniform_axis("x2", -float(x2_half), float(x2_half), n2, 1.0, 0),
        _uniform_axis("t", 0.0, float(t_max), nt, 1.0, 0),
    )
    domain = _assemble(DomainKind.HALFSPACE_BOX, dim_n, dim_m, axes, ((2, "low"),))
    logger.debug("domain_built", **domain.descriptor())
    return domain


def build_domain(descriptor: Dict[str, Any]) -> DiscreteDomain:
    """Build a domain from its JSON descriptor ``{kind, n, m, counts, extents}``."""
    kind = DomainKind(descriptor["kind"])
    n = int(descriptor["n"])
    m = float(descriptor.get("m", 0.0))
    counts = [int(c) for c in descriptor.get("counts", [])]
    extents = [float(e) for e in descriptor.get("extents", [])]
    expected = {
        DomainKind.INTERVAL: (1, 1),
        DomainKind.RADIAL_BALL: (1, 0),
        DomainKind.HALFSPACE_CYLINDER: (2, 2),
        DomainKind.HALFSPACE_BOX: (3, 3),
    }[kind]
    if len(counts) != expected[0] or len(extents) < expected[1]:
        raise InvalidDomainError(
            f"Domain {kind.value} expects {expected[0]} counts and {expected[1]} extents",
            counts=counts,
            extents=extents,
        )
    if kind == DomainKind.INTERVAL:
        return build_interval_domain(counts[0], extents[0], n, m)
    if kind == DomainKind.RADIAL_BALL:
        return build_radial_ball_domain(counts[0], n, m)
    if kind == DomainKind.HALFSPACE_CYLINDER:
        return build_halfspace_cylinder_domain(counts[0], counts[1], extents[0], extents[1], n, m)
    return build_halfspace_box_domain(*counts, *extents, dim_m=m, dim_n=n)


# Discrete calculus


def stiffness_matrix(
    domain: DiscreteDomain, weight: Optional[NodalField] = None
) -> sp.csr_matrix:
    """Symmetric ``D^T diag(w_e) D`` with edge weights times the averaged extra weight.

    Truncation faces contribute nothing (homogeneous Neumann closure).
    """
    edge = domain.edge_weight
    if weight is not None:
        edge = edge * (domain.midpoint @ weight)
    return (domain.difference.T @ sp.diags(edge) @ domain.difference).tocsr()


def face_flux(
    domain: DiscreteDomain,
    u: NodalField,
    weight: Optional[NodalField] = None,
    include_truncation: bool = True,
) -> NodalField:
    """Outward face fluxes ``sum_faces weight_f * w * du/dnu`` accumulated per node."""
    flux = np.zeros(domain.node_count)
    w = np.ones(domain.node_count) if weight is None else weight
    for face in domain.faces:
        if not face.trace and not include_truncation:
            continue
        dnu = (3.0 * u[face.nodes] - 4.0 * u[face.inner1] + u[face.inner2]) / (2.0 * face.spacing)
        np.add.at(flux, face.nodes, face.weight * w[face.nodes] * dnu)
    return flux


def divergence_laplacian(
    domain: DiscreteDomain, u: NodalField, weight: Optional[NodalField] = None
) -> NodalField:
    """``(1/(rho w)) div(rho w grad u)`` on every node's dual cell."""
    w = np.ones(domain.node_count) if weight is None else weight
    div = -(stiffness_matrix(domain, weight) @ u) + face_flux(domain, u, weight)
    return np.asarray(div / (domain.quad_weight * w), dtype=np.float64)


def laplacian(domain: DiscreteDomain, u: NodalField) -> NodalField:
    """Discrete Laplace-Beltrami operator of the background geometry."""
    return divergence_laplacian(domain, np.asarray(u, dtype=np.float64))


def partial_derivatives(domain: DiscreteDomain, u: NodalField) -> List[NodalField]:
    """Second-order central (one-sided at edges) partial derivatives along every axis."""
    grid = np.asarray(u, dtype=np.float64).reshape(domain.shape)
    return [
        np.gradient(grid, axis.spacing, axis=a, edge_order=2).ravel()
        for a, axis in enumerate(domain.axes)
    ]


def gradient_inner(domain: DiscreteDomain, a: NodalField, b: NodalField) -> NodalField:
    """Pointwise ``<grad a, grad b>`` of the background metric."""
    da = partial_derivatives(domain, a)
    db = partial_derivatives(domain, b)
    return np.asarray(sum(x * y for x, y in zip(da, db)), dtype=np.float64)


def hessian_components(
    domain: DiscreteDomain, u: NodalField
) -> Dict[str, Tuple[NodalField, bool]]:
    """Available Hessian components as ``name -> (values, is_diagonal)``.

    Radial coordinates add the angular block ``(1/r) du/dr``, replaced by ``d2u/dr2`` on the axis.
    """
    first = partial_derivatives(domain, u)
    names = [axis.name for axis in domain.axes]
    components: Dict[str, Tuple[NodalField, bool]] = {}
    for a in range(len(domain.axes)):
        second = partial_derivatives(domain, first[a])
        for b in range(a, len(domain.axes)):
            components[f"{names[a]}{names[b]}"] = (second[b], a == b)
    if domain.kind in (DomainKind.RADIAL_BALL, DomainKind.HALFSPACE_CYLINDER):
        r = domain.coordinate("r")
        drr = components["rr"][0]
        with np.errstate(divide="ignore", invalid="ignore"):
            angular = np.where(r > 0, first[0] / np.where(r > 0, r, 1.0), drr)
        components["angular"] = (angular, True)
    return components


def normal_derivative(domain: DiscreteDomain, u: NodalField) -> BoundaryField:
    """Outward normal derivative at the boundary nodes, three-point one-sided."""
    u = np.asarray(u, dtype=np.float64)
    b = domain.boundary_index
    return np.asarray(
        (3.0 * u[b] - 4.0 * u[domain.boundary_inner1] + u[domain.boundary_inner2])
        / (2.0 * domain.boundary_spacing),
        dtype=np.float64,
    )


def integrate_volume(
    domain: DiscreteDomain, u: NodalField, extra_weight: Optional[NodalField] = None
) -> float:
    """Quadrature of ``u * extra_weight`` against the volume measure."""
    values = np.asarray(u, dtype=np.float64) * domain.quad_weight
    if extra_weight is not None:
        values = values * extra_weight
    return float(np.sum(values))


def integrate_boundary(
    domain: DiscreteDomain, u: BoundaryField, extra_weight: Optional[BoundaryField] = None
) -> float:
    """Quadrature of ``u * extra_weight`` against the induced boundary measure."""
    values = np.asarray(u, dtype=np.float64) * domain.boundary_weight
    if extra_weight is not None:
        values = values * extra_weight
    return float(np.sum(values))


def trace_coordinates(domain: DiscreteDomain) -> Tuple[NodalField, NodalField]:
    """Tangential distance along the trace boundary and normal distance from it."""
    if domain.kind == DomainKind.INTERVAL:
        x = domain.coordinate("x")
        return np.zeros_like(x), np.minimum(x, x[-1] - x)
    if domain.kind == DomainKind.RADIAL_BALL:
        r = domain.coordinate("r")
        return np.zeros_like(r), 1.0 - r
    if domain.kind == DomainKind.HALFSPACE_CYLINDER:
        return domain.coordinate("r"), domain.coordinate("t")
    x1, x2 = domain.coordinate("x1"), domain.coordinate("x2")
    return np.hypot(x1, x2), domain.coordinate("t")


def smooth_random_field(
    domain: DiscreteDomain,
    rng: np.random.Generator,
    low: float,
    high: float,
    modes: int = 3,
) -> NodalField:
    """Random low-frequency cosine field rescaled to span ``[low, high]``."""
    values = np.zeros(domain.node_count)
    for a, axis in enumerate(domain.axes):
        lo, hi = float(axis.coords[0]), float(axis.coords[-1])
        xi = (domain.coords[:, a] - lo) / (hi - lo)
        for j in range(1, modes + 1):
            values += rng.normal() / j * np.cos(pi * j * xi)
    spread = float(np.max(values) - np.min(values))
    if spread <= 0:
        return np.full(domain.node_count, 0.5 * (low + high))
    return np.asarray(low + (high - low) * (values - np.min(values)) / spread, dtype=np.float64)
