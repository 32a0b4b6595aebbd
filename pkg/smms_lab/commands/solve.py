"""Smaller metric with prescribed weighted curvatures, and the uniqueness probe."""
from typing import Any, Dict, cast

import pandas as pd

from smms_lab.commands.base import CommandContext
from smms_lab.models import SolveParams
from smms_lab.services import monotone_solver


def run_solve(ctx: CommandContext) -> Dict[str, Any]:
    """Run the construction; a refused construction is a verdict, not an error."""
    params = cast(SolveParams, ctx.params)
    result = monotone_solver.find_smaller_metric(
        ctx.bg,
        epsilon=params.epsilon,
        delta=params.delta,
        tol=params.tol,
        max_iter=params.max_iter,
        newton_check=params.newton_check,
    )
    summary = result.verdict()
    summary["succeeded"] = result.succeeded
    if result.solution is not None:
        ctx.write_fields("solution.csv", {"u": result.solution})
        ctx.write_frame("solve_history.csv", pd.DataFrame(result.history))

    if params.uniqueness_starts:
        report = monotone_solver.uniqueness_probe(
            ctx.bg, count=params.uniqueness_starts, seed=ctx.seed
        )
        summary["uniqueness"] = report.to_dict()
    ctx.write_json("solve.json", summary)
    return summary
