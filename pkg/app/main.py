"""
CLI entry point: parse, merge config, echo it, run one command and map
failures to exit codes (0 success, 1 user error, 2 internal error).
"""

import logging
import platform
import sys
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from app.api.dependencies import CliConfig, load_config_file
from app.api.router import build_parser
from app.core.config import settings
from app.core.exceptions import INTERNAL_ERROR, USER_ERROR, TripletLeafError, UsageError
from app.core.monitoring import metrics_tracker, setup_logging

logger = logging.getLogger(__name__)


# ============================================================================
# EXCEPTION HANDLERS
# ============================================================================

def engine_exception_handler(exc: TripletLeafError) -> int:
    """Handler for engine exceptions; the exit code travels with the exception class"""
    log = logger.critical if exc.exit_code == INTERNAL_ERROR else logger.error
    log(
        f"{exc.error_code} - {exc.detail}",
        extra={"error_code": exc.error_code, "exit_code": exc.exit_code, "context": exc.context}
    )
    metrics_tracker.track_error(exc.error_code)
    if isinstance(exc, UsageError) and exc.usage:
        sys.stderr.write(exc.usage)
    sys.stderr.write(f"error: {exc.error_code}: {exc.detail}\n")
    return exc.exit_code


def validation_exception_handler(exc: ValidationError) -> int:
    """Handler for pydantic validation errors in configs built from flags"""
    errors = [
        {"field": ".".join(str(p) for p in e["loc"]), "message": e["msg"]}
        for e in exc.errors()
    ]
    logger.warning("Config validation failed", extra={"error_code": "VALIDATION_ERROR", "errors": errors})
    metrics_tracker.track_error("VALIDATION_ERROR")
    details = "; ".join(f"{e['field'] or exc.title}: {e['message']}" for e in errors)
    sys.stderr.write(f"error: VALIDATION_ERROR: {details}\n")
    return USER_ERROR


def generic_exception_handler(exc: Exception) -> int:
    """Handler for unhandled exceptions"""
    logger.critical(
        f"Unhandled Exception: {exc}",
        extra={"exception_type": type(exc).__name__},
        exc_info=True
    )
    metrics_tracker.track_error("INTERNAL_ERROR")
    sys.stderr.write(f"error: INTERNAL_ERROR: {type(exc).__name__}: {exc}\n")
    return INTERNAL_ERROR


# ============================================================================
# DISPATCH
# ============================================================================

def _config_path(argv: List[str]) -> Optional[str]:
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if arg.startswith("--config="):
            return arg.split("=", 1)[1]
    return None


def cmd_dispatch(argv: List[str]) -> int:
    parser, subparsers = build_parser()

    # config-file values become subcommand defaults, so explicit flags still win
    command = next((a for a in argv if not a.startswith("-")), None)
    config_path = _config_path(argv)
    if command in subparsers and config_path:
        sub = subparsers[command]
        values = load_config_file(config_path, sub)
        for action in sub._actions:
            if action.dest in values:
                action.required = False
        sub.set_defaults(**values)

    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # --help and friends
        return int(e.code or 0)

    cfg = CliConfig.from_namespace(args)
    logger.info(f"effective_config {cfg.echo()}", extra={"command": cfg.command})
    return int(args.handler(cfg))


def main(argv: Optional[List[str]] = None) -> int:
    setup_logging(settings.LOG_LEVEL, settings.LOG_JSON)
    metrics_tracker.set_system_info(settings.VERSION, platform.python_version(), np.__version__)
    argv = list(sys.argv[1:] if argv is None else argv)

    try:
        return cmd_dispatch(argv)
    except TripletLeafError as exc:
        return engine_exception_handler(exc)
    except ValidationError as exc:
        return validation_exception_handler(exc)
    except Exception as exc:
        return generic_exception_handler(exc)
    finally:
        if settings.METRICS_TEXTFILE:
            metrics_tracker.export(settings.METRICS_TEXTFILE)
