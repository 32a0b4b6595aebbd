"""Subcommand handlers, registered per command the way the web layer registered routers."""
from typing import Dict

from smms_lab.commands import curvature, eigen, escobar, flow, solve
from smms_lab.commands.base import CommandContext, Handler
from smms_lab.models import Command

HANDLERS: Dict[Command, Handler] = {
    Command.CURVATURE: curvature.run_curvature,
    Command.EIGEN: eigen.run_eigen,
    Command.FLOW: flow.run_flow,
    Command.SOLVE: solve.run_solve,
    Command.GNS: escobar.run_gns,
    Command.MINIMIZE: escobar.run_minimize,
    Command.SOLITON: curvature.run_soliton,
    Command.CRITERIA: eigen.run_criteria,
}

HELP: Dict[Command, str] = {
    Command.CURVATURE: "weighted scalar and mean curvature, optionally of a conformal image",
    Command.EIGEN: "first eigenpairs of (L, B) and (Lbar, Bbar)",
    Command.FLOW: "unnormalized or normalized weighted Yamabe flow",
    Command.SOLVE: "smaller metric with the same weighted curvatures",
    Command.GNS: "sharp trace constant, extremals and the Aubin-type estimate",
    Command.MINIMIZE: "projected-gradient minimization of the Escobar quotient",
    Command.SOLITON: "gradient-soliton residuals for a potential f",
    Command.CRITERIA: "integral sign criteria for the first eigenvalues",
}

__all__ = ["HANDLERS", "HELP", "CommandContext", "Handler"]
