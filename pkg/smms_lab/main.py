"""Command-line entry point: validate an experiment config, run it, write artifacts."""
import argparse
import json
import platform
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import pydantic
import scipy
import structlog
from pydantic import ValidationError

from smms_lab import __version__
from smms_lab.commands import HANDLERS, HELP, CommandContext
from smms_lab.config import settings
from smms_lab.exceptions import ConfigValidationError, SmmsLabError
from smms_lab.log_config import configure_logging
from smms_lab.models import PARAMS_BY_COMMAND, Command, ExperimentConfig
from smms_lab.services import field_io

logger = structlog.get_logger()

MANIFEST_NAME = "manifest.json"
ERROR_NAME = "error.json"

EXIT_OK = 0
EXIT_MODULE_ERROR = 1
EXIT_CONFIG_ERROR = 2


def _violations(exc: ValidationError, prefix: str = "") -> List[str]:
    out = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"])
        out.append(f"{prefix}{location}: {error['msg']}" if location else error["msg"])
    return out


def validate_config(text: str, command: Optional[Command] = None) -> ExperimentConfig:
    """Parse and validate a JSON experiment config.

    ``command`` (the CLI subcommand) fills in a missing ``command`` key and must match a present
    one.

    Raises:
        ConfigValidationError: With every violation found, top-level and per-command params.
    """
    if not text.strip():
        raise ConfigValidationError(["config is empty"])
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigValidationError([f"malformed JSON: {exc.msg} (line {exc.lineno})"]) from exc
    if not isinstance(data, dict):
        raise ConfigValidationError(["config must be a JSON object"])

    violations: List[str] = []
    if command is not None:
        given = data.setdefault("command", command.value)
        if given != command.value:
            violations.append(f"command: config says {given!r} but {command.value!r} was invoked")

    config: Optional[ExperimentConfig] = None
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        violations.extend(_violations(exc))

    params = data.get("params", {})
    name = data.get("command")
    known = {c.value for c in Command}
    if isinstance(name, str) and name in known and isinstance(params, dict):
        try:
            PARAMS_BY_COMMAND[Command(name)].model_validate(params)
        except ValidationError as exc:
            violations.extend(_violations(exc, prefix="params."))

    if violations or config is None:
        raise ConfigValidationError(violations)
    return config


def _versions() -> Dict[str, str]:
    return {
        "smms_lab": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.VERSION,
    }


def _write_manifest(
    out_dir: Path,
    inputs: Any,
    seed: Optional[int],
    started: float,
    status: int,
    outputs: List[Path],
    summary: Optional[Dict[str, Any]] = None,
) -> Path:
    manifest = {
        "app": settings.app_name,
        "inputs": inputs,
        "seed": seed,
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - started,
        "exit_status": status,
        "outputs": field_io.output_names(outputs, out_dir),
        "summary": summary,
    }
    return field_io.write_json(out_dir / MANIFEST_NAME, manifest)


def _write_error(out_dir: Path, exc: BaseException) -> Path:
    if isinstance(exc, SmmsLabError):
        payload = exc.to_dict()
    else:
        payload = {"error": "internal_error", "detail": str(exc), "context": {}}
    return field_io.write_json(out_dir / ERROR_NAME, payload)


def run(
    config: ExperimentConfig,
    out_dir: Optional[Path] = None,
    seed: Optional[int] = None,
    base_dir: Optional[Path] = None,
) -> int:
    """Run one validated experiment and return the process exit status.

    The manifest is always written; failures add ``error.json`` and a nonzero status.
    """
    started = time.perf_counter()
    out_dir = Path(out_dir or config.output_dir or settings.output_dir)
    if seed is None:
        seed = settings.seed if config.seed is None else config.seed
    inputs = config.model_dump(mode="json")
    outputs: List[Path] = []
    ctx: Optional[CommandContext] = None
    log = logger.bind(command=config.command.value, out_dir=str(out_dir), seed=seed)
    log.info("command_started")

    try:
        bg = field_io.background_from_descriptor(config.smms, base_dir)
        params = config.command_params()
        ctx = CommandContext(
            config=config, params=params, bg=bg, out_dir=out_dir, seed=seed, base_dir=base_dir
        )
        summary = HANDLERS[config.command](ctx)
        outputs.extend(ctx.outputs)
    except ValidationError as exc:
        error = ConfigValidationError(_violations(exc, prefix="params."))
        log.error("command_failed", error=error.code, detail=error.detail)
        outputs.append(_write_error(out_dir, error))
        _write_manifest(out_dir, inputs, seed, started, EXIT_CONFIG_ERROR, outputs)
        return EXIT_CONFIG_ERROR
    except SmmsLabError as exc:
        status = EXIT_CONFIG_ERROR if isinstance(exc, ConfigValidationError) else EXIT_MODULE_ERROR
        log.error("command_failed", error=exc.code, detail=exc.detail, context=exc.context)
        if ctx is not None:
            outputs.extend(ctx.outputs)
        outputs.append(_write_error(out_dir, exc))
        _write_manifest(out_dir, inputs, seed, started, status, outputs)
        return status
    except Exception as exc:
        log.error("command_crashed", error=str(exc), exc_info=True)
        if ctx is not None:
            outputs.extend(ctx.outputs)
        outputs.append(_write_error(out_dir, exc))
        _write_manifest(out_dir, inputs, seed, started, EXIT_MODULE_ERROR, outputs)
        return EXIT_MODULE_ERROR

    _write_manifest(out_dir, inputs, seed, started, EXIT_OK, outputs, summary)
    log.info("command_finished", outputs=len(outputs), wall_time_s=time.perf_counter() - started)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smms-lab",
        description="Conformal geometry experiments on smooth metric measure spaces.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for command in Command:
        sub = subparsers.add_parser(command.value, help=HELP[command])
        sub.add_argument("--config", type=Path, required=True, help="experiment JSON file")
        sub.add_argument("--out", type=Path, default=None, help="output directory")
        sub.add_argument("--seed", type=int, default=None, help="random seed")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(settings.log_level, settings.log_json)
    command = Command(args.command)
    started = time.perf_counter()

    try:
        text = args.config.read_text(encoding="utf-8")
        config = validate_config(text, command)
    except (OSError, ConfigValidationError) as exc:
        error = (
            exc
            if isinstance(exc, ConfigValidationError)
            else ConfigValidationError([f"cannot read config: {exc}"])
        )
        out_dir = Path(args.out or settings.output_dir)
        logger.error("config_invalid", violations=error.violations)
        error_path = _write_error(out_dir, error)
        inputs = {"config_path": str(args.config)}
        _write_manifest(out_dir, inputs, args.seed, started, EXIT_CONFIG_ERROR, [error_path])
        return EXIT_CONFIG_ERROR

    return run(config, args.out, args.seed, base_dir=args.config.parent)


if __name__ == "__main__":
    sys.exit(main())
