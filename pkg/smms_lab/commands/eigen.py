"""First eigenvalues and the integral sign criteria."""
from typing import Any, Dict, cast

import structlog

from smms_lab.commands.base import CommandContext
from smms_lab.models import CriteriaParams, EigenParams, EigenProblem, Verdict
from smms_lab.services import spectral

logger = structlog.get_logger()


def run_eigen(ctx: CommandContext) -> Dict[str, Any]:
    params = cast(EigenParams, ctx.params)
    results = {}
    if params.problem in ("LB", "both"):
        results[EigenProblem.LB] = spectral.first_eigen_LB(ctx.bg, params.tol, params.max_iter)
    if params.problem in ("barLbarB", "both"):
        results[EigenProblem.BAR] = spectral.first_eigen_barLbarB(
            ctx.bg, params.tol, params.max_iter
        )
    ctx.write_fields(
        "eigenfunctions.csv",
        {f"u_{problem.value}": result.eigenfunction for problem, result in results.items()},
    )
    summary = {problem.value: result.to_dict() for problem, result in results.items()}
    ctx.write_json("eigen.json", summary)
    return summary


def run_criteria(ctx: CommandContext) -> Dict[str, Any]:
    """Evaluate both integral criteria, optionally confirming certified signs by eigensolves."""
    params = cast(CriteriaParams, ctx.params)
    volume, boundary = spectral.criterion_integrals(ctx.bg)
    verdicts = {
        EigenProblem.BAR: spectral.criterion_bar_sign(ctx.bg),
        EigenProblem.LB: spectral.criterion_LB_sign(ctx.bg),
    }
    summary: Dict[str, Any] = {
        "volume_integral": volume,
        "boundary_integral": boundary,
        "verdicts": {problem.value: verdict.value for problem, verdict in verdicts.items()},
    }
    if params.cross_check:
        lambdas = {
            EigenProblem.BAR: spectral.first_eigen_barLbarB(ctx.bg).lambda1,
            EigenProblem.LB: spectral.first_eigen_LB(ctx.bg).lambda1,
        }
        summary["lambda1"] = {problem.value: value for problem, value in lambdas.items()}
        summary["consistent"] = all(
            lambdas[problem] < 0
            for problem, verdict in verdicts.items()
            if verdict == Verdict.NEGATIVE_CERTIFIED
        )
        if not summary["consistent"]:
            logger.warning("criterion_contradicted", **summary["lambda1"])
    ctx.write_json("criteria.json", summary)
    return summary
