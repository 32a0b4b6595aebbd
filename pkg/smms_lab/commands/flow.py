"""Weighted Yamabe flow runs."""
from typing import Any, Dict, cast

from smms_lab.commands.base import CommandContext
from smms_lab.models import FlowParams, FlowState
from smms_lab.services import yamabe_flow
from smms_lab.services.smms_core import ConformalFactor


def run_flow(ctx: CommandContext) -> Dict[str, Any]:
    """Integrate the flow and write the sampled trace plus the final SMMS data.

    Watchdog failures propagate as ``StepSizeError`` and end the run with an error artifact.
    """
    params = cast(FlowParams, ctx.params)
    w0 = ConformalFactor(ctx.resolve(params.w0))
    state = FlowState(w=w0, time=0.0, bg=ctx.bg)
    trace, final = yamabe_flow.integrate(
        state, params.t_end, params.dt, params.normalized, params.sample_every
    )
    ctx.write_frame("flow_trace.csv", trace.to_frame())

    data = yamabe_flow.conformal_metric_data(ctx.bg, final.w)
    ctx.write_fields(
        "final_state.csv",
        {
            "w": final.w.w,
            "metric_factor": data["metric_factor"],
            "density": data["density"],
            "R": data["R"],
            "vol_weight": data["vol_weight"],
        },
    )
    ctx.write_fields(
        "final_boundary.csv", {"H": data["H"], "area_weight": data["area_weight"]}, boundary=True
    )

    summary: Dict[str, Any] = {
        "normalized": params.normalized,
        "t_end": final.time,
        "dt": params.dt,
        "samples": len(trace.times),
        "energy_start": trace.energy[0],
        "energy_end": trace.energy[-1],
        "energy_tilde_start": trace.energy_tilde[0],
        "energy_tilde_end": trace.energy_tilde[-1],
        "volume_start": trace.volume[0],
        "volume_end": trace.volume[-1],
        "max_boundary_residual": max(trace.boundary_residual),
    }
    if params.reparametrization:
        report = yamabe_flow.reparametrization_check(ctx.bg, w0, params.t_end, params.dt)
        summary["reparametrization"] = report.to_dict()
    ctx.write_json("flow.json", summary)
    return summary
