"""Sharp trace constant, its extremals, the Aubin-type estimate and Escobar minimization."""
from typing import Any, Dict, List, cast

import numpy as np
import pandas as pd
import structlog

from smms_lab.commands.base import CommandContext
from smms_lab.models import GnsParams, MinimizeParams
from smms_lab.services import domain_grid, variational

logger = structlog.get_logger()


def run_gns(ctx: CommandContext) -> Dict[str, Any]:
    """Evaluate the extremal ``w_{eps,0}`` on a half-space domain against ``Lambda_{m,n}``."""
    params = cast(GnsParams, ctx.params)
    bg = ctx.bg
    d = bg.domain
    sharp = variational.lambda_mn(bg.dim_m, bg.dim_n)
    tangential, normal = domain_grid.trace_coordinates(d)
    w = variational.gns_extremal(params.epsilon, 0.0, bg.dim_m, bg.dim_n)(tangential, normal)
    quotient = variational.trace_gns_quotient(d, w, bg.dim_m, bg.dim_n)
    tail = variational.truncation_tail_bound(d, params.epsilon, bg.dim_m, bg.dim_n)
    summary: Dict[str, Any] = {
        "lambda_mn": sharp,
        "quotient": quotient,
        "relative_gap": (quotient - sharp) / sharp,
        "tail_bound": tail,
        "epsilon": params.epsilon,
        "spacing": d.spacing,
    }
    ctx.write_fields("extremal.csv", {"w": w})

    if params.aubin_epsilon is not None:
        family = variational.build_trial_family(bg, ctx.seed, params.bump_count)
        estimate = variational.estimate_aubin_constant(bg, params.aubin_epsilon, family)
        ctx.write_frame("aubin_trials.csv", estimate.to_frame())
        summary["aubin"] = estimate.to_dict()
    ctx.write_json("gns.json", summary)
    return summary


def run_minimize(ctx: CommandContext) -> Dict[str, Any]:
    """Minimize the Escobar quotient from the configured start and seeded perturbations of it.

    The reported estimate is the smallest quotient among the runs that are not floor-limited.
    """
    params = cast(MinimizeParams, ctx.params)
    bg = ctx.bg
    init = ctx.resolve(params.init)
    inits: List[np.ndarray] = [init]
    rng = ctx.rng()
    for _ in range(params.starts - 1):
        noise = domain_grid.smooth_random_field(bg.domain, rng, -1.0, 1.0)
        inits.append(init * (1.0 + params.perturbation * noise))
    results = variational.minimize_escobar_multistart(bg, inits, params.tol, params.max_iter)

    usable = [index for index, result in enumerate(results) if not result.floor_active]
    if not usable:
        logger.warning("escobar_all_runs_floor_active", starts=len(results))
        usable = list(range(len(results)))
    best = min(usable, key=lambda index: results[index].lambda_estimate)
    winner = results[best]

    ctx.write_fields("minimizer.csv", {"w": winner.w})
    ctx.write_frame(
        "minimize_history.csv",
        pd.DataFrame(
            {
                "start": np.concatenate(
                    [np.full(len(result.history), index) for index, result in enumerate(results)]
                ),
                "iteration": np.concatenate(
                    [np.arange(len(result.history)) for result in results]
                ),
                "Q": np.concatenate([np.asarray(result.history) for result in results]),
            }
        ),
    )
    summary: Dict[str, Any] = {
        "best_start": best,
        "lambda_estimate": winner.lambda_estimate,
        "runs": [result.to_dict() for result in results],
    }
    if bg.dim_n >= 3:
        summary["lambda_mn"] = variational.lambda_mn(bg.dim_m, bg.dim_n)
    ctx.write_json("minimize.json", summary)
    return summary
