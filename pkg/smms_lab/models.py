"""Enumerations, experiment configuration schema and result records."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Dict, List, Literal, Optional, Union

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from pydantic import BaseModel, ConfigDict, Field, field_validator

from smms_lab.exceptions import InvalidInputError

if TYPE_CHECKING:
    from smms_lab.services.smms_core import ConformalFactor, SmmsBackground

# Scalar samples on all nodes / on boundary nodes only
NodalField = NDArray[np.float64]
BoundaryField = NDArray[np.float64]


class DomainKind(str, Enum):
    """Model geometries."""
    INTERVAL = "interval"
    RADIAL_BALL = "radial_ball"
    HALFSPACE_CYLINDER = "halfspace_cylinder"
    HALFSPACE_BOX = "halfspace_box"


class Command(str, Enum):
    """CLI subcommands."""
    CURVATURE = "curvature"
    EIGEN = "eigen"
    FLOW = "flow"
    SOLVE = "solve"
    GNS = "gns"
    MINIMIZE = "minimize"
    SOLITON = "soliton"
    CRITERIA = "criteria"


class EigenProblem(str, Enum):
    """The two first-eigenvalue problems."""
    LB = "LB"
    BAR = "barLbarB"


class Verdict(str, Enum):
    """Outcome of an integral sign criterion."""
    NEGATIVE_CERTIFIED = "negative_certified"
    INCONCLUSIVE = "inconclusive"


# Configuration schema


class StrictModel(BaseModel):
    """Base for configuration models, unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")


class ProfileRef(StrictModel):
    """Analytic field profile evaluated on the node coordinates.

    ``linear``: ``offset + sum c_i x_i``; ``quadratic``: ``offset + sum c_i x_i^2``;
    ``cosine``: ``offset + amplitude * cos(wavenumber * x_axis)``.
    """

    profile: Literal["linear", "quadratic", "cosine"]
    coefficients: List[float] = Field(default_factory=list)
    offset: float = 0.0
    amplitude: float = 1.0
    wavenumber: float = 1.0
    axis: int = Field(default=0, ge=0)


# constant | inline array | CSV path | analytic profile
FieldRef = Union[float, List[float], str, ProfileRef]


class DomainDescriptor(StrictModel):
    """Domain descriptor ``{kind, n, m, counts, extents}``."""

    kind: DomainKind
    n: int = Field(ge=1)
    m: float = Field(default=0.0, ge=0.0)
    counts: List[int]
    extents: List[float] = Field(default_factory=list)

    @field_validator("counts")
    @classmethod
    def validate_counts(cls, v: List[int]) -> List[int]:
        if not v or any(c < 3 for c in v):
            raise ValueError("counts must be a nonempty list of integers >= 3")
        return v

    @field_validator("extents")
    @classmethod
    def validate_extents(cls, v: List[float]) -> List[float]:
        if any(e <= 0 for e in v):
            raise ValueError("extents must be positive")
        return v


class SmmsDescriptor(StrictModel):
    """SMMS descriptor; omitted curvatures default to the flat model geometry values."""

    domain: DomainDescriptor
    phi0: FieldRef = 0.0
    R_g0: Optional[FieldRef] = None
    H_g0: Optional[FieldRef] = None


class CurvatureParams(StrictModel):
    conformal_factor: Optional[FieldRef] = None


class EigenParams(StrictModel):
    problem: Literal["LB", "barLbarB", "both"] = "both"
    tol: Optional[float] = Field(default=None, gt=0)
    max_iter: Optional[int] = Field(default=None, ge=1)


class FlowParams(StrictModel):
    normalized: bool = False
    t_end: float = Field(default=0.1, gt=0)
    dt: float = Field(default=1e-3, gt=0)
    sample_every: int = Field(default=10, ge=1)
    w0: FieldRef = 1.0
    reparametrization: bool = False


class SolveParams(StrictModel):
    tol: Optional[float] = Field(default=None, gt=0)
    max_iter: Optional[int] = Field(default=None, ge=1)
    epsilon: float = Field(default=0.5, gt=0, lt=1)
    delta: float = Field(default=0.5, gt=0, lt=1)
    newton_check: bool = True
    uniqueness_starts: int = Field(default=0, ge=0)


class GnsParams(StrictModel):
    epsilon: float = Field(default=1.0, gt=0)
    aubin_epsilon: Optional[float] = Field(default=None, gt=0)
    bump_count: int = Field(default=4, ge=0)


class MinimizeParams(StrictModel):
    init: FieldRef = 1.0
    tol: float = Field(default=1e-7, gt=0)
    max_iter: Optional[int] = Field(default=None, ge=1)
    starts: int = Field(default=1, ge=1)
    perturbation: float = Field(default=0.2, ge=0, lt=1)


class SolitonParams(StrictModel):
    f: FieldRef
    lambda_value: float


class CriteriaParams(StrictModel):
    cross_check: bool = True


PARAMS_BY_COMMAND: Dict[Command, type[StrictModel]] = {
    Command.CURVATURE: CurvatureParams,
    Command.EIGEN: EigenParams,
    Command.FLOW: FlowParams,
    Command.SOLVE: SolveParams,
    Command.GNS: GnsParams,
    Command.MINIMIZE: MinimizeParams,
    Command.SOLITON: SolitonParams,
    Command.CRITERIA: CriteriaParams,
}


class ExperimentConfig(StrictModel):
    """Validated experiment configuration; ``params`` is parsed per command."""

    command: Command
    smms: SmmsDescriptor
    params: Dict[str, Any] = Field(default_factory=dict)
    output_dir: Optional[str] = None
    seed: Optional[int] = None

    def command_params(self) -> StrictModel:
        return PARAMS_BY_COMMAND[self.command].model_validate(self.params)


# Result records


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the operator T and of the sub/supersolution pair.

    ``gamma`` and ``rho`` must satisfy the background bounds checked by the solver;
    ``alpha = 1 - epsilon^{2/(N-2)}`` is fixed by ``epsilon``.
    """

    gamma: float
    rho: float
    epsilon: float
    delta: float
    alpha: float
    tol: float
    max_iter: int

    def __post_init__(self) -> None:
        if self.gamma <= 0 or self.rho > 0:
            raise InvalidInputError("Need gamma > 0 and rho <= 0", gamma=self.gamma, rho=self.rho)
        for name in ("epsilon", "delta", "alpha"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise InvalidInputError(f"{name} must lie in (0, 1)", **{name: value})
        if self.tol <= 0 or self.max_iter < 1:
            raise InvalidInputError("Need tol > 0 and max_iter >= 1")


@dataclass
class SpectralResult:
    """First eigenpair of one eigenproblem with solver diagnostics."""

    problem: EigenProblem
    lambda1: float
    eigenfunction: NodalField
    iterations: int
    residual: float
    shift: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "problem": self.problem.value,
            "lambda1": self.lambda1,
            "iterations": self.iterations,
            "residual": self.residual,
            "shift": self.shift,
        }


@dataclass
class FlowState:
    """Conformal factor of a flow at a given time in the fixed conformal class of ``bg``."""

    w: ConformalFactor
    time: float
    bg: SmmsBackground


@dataclass
class FlowTrace:
    """Append-only diagnostics sampled along a flow."""

    times: List[float] = field(default_factory=list)
    energy: List[float] = field(default_factory=list)
    energy_tilde: List[float] = field(default_factory=list)
    volume: List[float] = field(default_factory=list)
    average_scalar: List[float] = field(default_factory=list)
    max_scalar: List[float] = field(default_factory=list)
    min_scalar: List[float] = field(default_factory=list)
    boundary_residual: List[float] = field(default_factory=list)
    energy_discrepancy: List[float] = field(default_factory=list)

    def append(self, **row: float) -> None:
        if self.times and row["times"] <= self.times[-1]:
            raise ValueError("Flow trace times must increase")
        for key, value in row.items():
            getattr(self, key).append(float(value))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(asdict(self))


@dataclass
class QuotientReport:
    """Escobar quotient evaluation with its Euler-Lagrange certificate."""

    A_value: float
    B_value: float
    Q_value: float
    el_interior_residual: float
    el_boundary_residual: float
    trial_id: str
    tail_bound: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SolitonReport:
    """Max-norm residuals of the gradient-soliton system."""

    hessian_residual: float
    gradient_residual: Optional[float]
    mean_curvature_residual: float
    normal_residual: float
    lambda_value: float
    scalar_curvature_mean: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ReparametrizationReport:
    """Deviation between the rescaled unnormalized flow and the normalized flow."""

    deviation: float
    t_end: float
    t_tilde_end: float
    samples: int
    psi_end: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SmallerMetricResult:
    """Outcome of the smaller-metric construction, a solution or a certified refusal."""

    hypotheses: Dict[str, bool]
    lambda1_LB: float
    lambda1_bar: float
    residual: Optional[float]
    iterations: int
    failed: List[str]
    solution: Optional[NodalField] = None
    epsilon: Optional[float] = None
    delta: Optional[float] = None
    newton_deviation: Optional[float] = None
    history: List[Dict[str, float]] = field(default_factory=list)

    @property
    def succeeded(self) -> bool:
        return self.solution is not None

    def verdict(self) -> Dict[str, Any]:
        return {
            "hypotheses": self.hypotheses,
            "lambda1_LB": self.lambda1_LB,
            "lambda1_bar": self.lambda1_bar,
            "residual": self.residual,
            "iterations": self.iterations,
            "failed": self.failed,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "newton_deviation": self.newton_deviation,
        }


@dataclass
class UniquenessReport:
    """Damped-Newton runs from several starts and their distance to ``w = 1``."""

    converged: List[bool]
    distances: List[float]
    hypotheses: Dict[str, bool]

    @property
    def all_unit(self) -> bool:
        return all(self.converged)

    def to_dict(self) -> Dict[str, Any]:
        return {**asdict(self), "all_unit": self.all_unit}


@dataclass
class MinimizationResult:
    """Projected-gradient minimization of the Escobar quotient."""

    w: NodalField
    lambda_estimate: float
    report: QuotientReport
    history: List[float]
    iterations: int
    status: str
    floor_active: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lambda_estimate": self.lambda_estimate,
            "iterations": self.iterations,
            "status": self.status,
            "floor_active": self.floor_active,
            "report": self.report.to_dict(),
        }


@dataclass
class AubinEstimate:
    """Empirical lower bound of the Aubin-type constant over a fixed trial family."""

    epsilon: float
    c_estimate: float
    trial_ids: List[str]
    required: List[float]
    family_version: str

    def to_frame(self) -> pd.DataFrame:
        slack = [self.c_estimate - value for value in self.required]
        return pd.DataFrame({"trial_id": self.trial_ids, "required": self.required, "slack": slack})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epsilon": self.epsilon,
            "c_estimate": self.c_estimate,
            "family_version": self.family_version,
            "trials": len(self.trial_ids),
        }
