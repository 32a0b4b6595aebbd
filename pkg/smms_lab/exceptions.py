"""Error hierarchy for the lab.

Every error carries a human-readable ``detail``, a stable ``code`` used in the CLI error JSON,
and an optional ``context`` mapping with machine-readable diagnostics.
"""
from typing import Any, Dict, List, Optional


class SmmsLabError(Exception):
    """Base error for all lab failures."""

    code = "smms_lab_error"
    default_detail = "SMMS lab operation failed"

    def __init__(self, detail: Optional[str] = None, **context: Any):
        self.detail = detail or self.default_detail
        self.context: Dict[str, Any] = context
        super().__init__(self.detail)

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable representation used for error JSON artifacts."""
        return {"error": self.code, "detail": self.detail, "context": self.context}


class InvalidDomainError(SmmsLabError):
    code = "invalid_domain"
    default_detail = "Invalid domain parameters"


class InvalidInputError(SmmsLabError):
    code = "invalid_input"
    default_detail = "Invalid input data"


class PositivityError(SmmsLabError):
    code = "positivity_violation"
    default_detail = "Conformal factor must be strictly positive"


class StepSizeError(SmmsLabError):
    """Raised by the flow watchdog; the advice is always to reduce dt."""

    code = "step_size"
    default_detail = "Flow step lost positivity or blew up, reduce dt"


class BoundaryClosureError(SmmsLabError):
    code = "boundary_closure"
    default_detail = "Boundary condition residual above tolerance after correction"


class SolverFailureError(SmmsLabError):
    code = "solver_failure"
    default_detail = "Solver did not converge"


class NonConvergenceError(SolverFailureError):
    code = "non_convergence"
    default_detail = "Iteration exceeded max_iter without converging"


class HypothesisViolationError(SmmsLabError):
    """A required hypothesis does not hold for the given background."""

    code = "hypothesis_violation"
    default_detail = "Hypothesis not satisfied"

    def __init__(
        self, detail: Optional[str] = None, failed: Optional[List[str]] = None, **context: Any
    ):
        super().__init__(detail, failed=list(failed or []), **context)
        self.failed: List[str] = list(failed or [])


class ConstructionFailureError(SmmsLabError):
    code = "construction_failure"
    default_detail = "No admissible sub/supersolution found"


class InvariantViolationError(SmmsLabError):
    code = "invariant_violation"
    default_detail = "Numerical invariant violated"


class DivisionGuardError(SmmsLabError):
    code = "division_guard"
    default_detail = "Denominator vanishes"


class ConfigValidationError(SmmsLabError):
    """Configuration failed validation; ``violations`` lists every problem found."""

    code = "config_validation"
    default_detail = "Configuration is invalid"

    def __init__(self, violations: List[str], detail: Optional[str] = None):
        super().__init__(detail, violations=list(violations))
        self.violations: List[str] = list(violations)
