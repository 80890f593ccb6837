"""quasipot command line.

Commands:
- analyze: equilibrium points, A, S, residuals and exit data as a JSON report
- flow: fans of Hamiltonian characteristics written as CSV files + manifest
- simulate: Euler-Maruyama covariance or exit-time estimates
- kramers-demo: the Kramers identities for one (gamma, U'') pair

Run with: python -m quasipot
Or via entry point: quasipot
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from quasipot import __version__
from quasipot.commands import AnalyzeCommand, FlowCommand, KramersDemoCommand, SimulateCommand
from quasipot.commands.kramers_demo import render_text
from quasipot.config import OutputStore, Settings, dumps, get_output_store, get_settings, json_ready
from quasipot.errors import InvalidSettings, QuasipotError, UsageError
from quasipot.schema import envelope, load_model_file

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------


class _ArgumentParser(argparse.ArgumentParser):
    """argparse that raises instead of printing usage and exiting."""

    def error(self, message: str):
        raise UsageError(message, {"usage": self.format_usage().strip()})


def _axes(text: str, n: int, fields: int) -> list[list[float]]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if len(parts) == 1:
        parts = parts * n
    if len(parts) != n:
        raise ValueError(f"grid {text!r} has {len(parts)} axes, model has {n}")
    out = []
    for p in parts:
        items = p.split(":")
        if len(items) != fields:
            raise ValueError(f"axis {p!r} must have {fields} ':'-separated fields")
        out.append([float(v) for v in items])
    return out


def parse_grid(text: str, n: int) -> np.ndarray:
    """Seeds from ``lo:hi:count`` per axis (one axis is reused for every axis)."""
    axes = []
    for lo, hi, count in _axes(text, n, 3):
        if count < 1 or not float(count).is_integer():
            raise ValueError(f"grid count must be a positive integer, got {count}")
        axes.append(np.linspace(lo, hi, int(count)) if count > 1 else np.array([lo]))
    return np.array(list(itertools.product(*axes)), dtype=float)


def parse_point(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")], dtype=float)


def _read_model(path: str):
    text = sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
    return load_model_file(text)


def _emit(data: dict[str, Any]) -> None:
    sys.stdout.write(dumps(data) + "\n")


def _error_response(error: Exception) -> dict[str, Any]:
    """Machine-readable error payload."""
    if isinstance(error, QuasipotError):
        return error.to_dict()
    if isinstance(error, ValueError):
        return {"error": True, "code": "invalid_argument", "message": str(error)}
    if isinstance(error, OSError):
        return {"error": True, "code": "io_error", "message": str(error)}
    return {"error": True, "code": "unexpected", "message": f"Unexpected error: {error}"}


def _exit_code(error: Exception) -> int:
    if isinstance(error, QuasipotError):
        return error.exit_code
    if isinstance(error, ValueError):
        return 2
    return 1


# ===========================================================================
#  COMMANDS
# ===========================================================================


def cmd_analyze(args, settings: Settings, store: OutputStore | None) -> int:
    doc = _read_model(args.model)
    m = doc.build()
    seeds = parse_grid(args.seeds or settings.seeds, m.n)
    report = AnalyzeCommand(settings).run(m, seeds, args.tol)
    doc = envelope(report)
    if store is not None:
        store.write_json("report.json", doc)
    _emit(doc)
    return 0


def cmd_flow(args, settings: Settings, store: OutputStore | None) -> int:
    doc = _read_model(args.model)
    m = doc.build()
    seeds = parse_grid(args.seeds or settings.seeds, m.n)
    manifest = FlowCommand(settings, store or get_output_store(settings)).run(
        m,
        seeds,
        ep_index=args.ep,
        mode=args.mode,
        k=args.k,
        radius=args.radius,
        dt=args.dt,
        t_max=args.tmax,
        reverse=args.reverse,
        box_half_width=args.box_half_width,
        tol=args.tol,
    )
    _emit(envelope(manifest))
    return 0


def cmd_simulate(args, settings: Settings, store: OutputStore | None) -> int:
    doc = _read_model(args.model)
    m = doc.build()
    seeds = parse_grid(args.seeds or settings.seeds, m.n)
    command = SimulateCommand(settings, store or get_output_store(settings))
    cfg = command.config(
        epsilon=args.eps,
        dt=args.dt,
        n_steps=args.steps,
        n_paths=args.paths,
        seed=args.seed,
        burn_in=args.burn_in if args.burn_in is not None else args.steps // 10,
    )
    if args.exit_time is not None:
        x0 = parse_point(args.x0) if args.x0 else None
        report = command.exit_time(m, cfg, args.exit_time, seeds, x0=x0, ep_index=args.ep)
    else:
        report = command.covariance(m, cfg, seeds, ep_index=args.ep)
    _emit(envelope(report))
    return 0


def cmd_kramers_demo(args, settings: Settings, store: OutputStore | None) -> int:
    report = KramersDemoCommand(settings).run(args.gamma, args.u2)
    if store is not None:
        store.write_json("kramers_demo.json", envelope(report))
    if args.format == "text":
        sys.stdout.write(render_text(report))
    else:
        _emit(envelope(report))
    return 0


# ===========================================================================
#  PARSER
# ===========================================================================


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="quasipot",
        description="Quasipotential at equilibrium points of weak-noise SDEs.",
    )
    parser.add_argument("--version", action="version", version=f"quasipot {__version__}")
    parser.add_argument("--out", help="Directory for reports and CSV files")
    parser.add_argument("--quiet", action="store_true", help="Only log errors")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_args(p):
        p.add_argument("model", help="Model JSON file ('-' for stdin)")
        p.add_argument("--seeds", help=f"Newton seed grid 'lo:hi:count,...' (default {settings.seeds})")
        p.add_argument("--tol", type=float, default=None, help="Newton residual tolerance")

    p = sub.add_parser("analyze", help="Analyze every equilibrium point")
    model_args(p)
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("flow", help="Integrate characteristics from an EP")
    model_args(p)
    p.add_argument("--ep", type=int, default=0, help="EP index in the analysis order")
    p.add_argument("--mode", choices=["ring", "exit"], default="ring")
    p.add_argument("--k", type=int, default=None, help="Ring size")
    p.add_argument("--radius", type=float, default=None, help="Ring radius / exit offset")
    p.add_argument("--dt", type=float, default=None, help="RK4 step")
    p.add_argument("--tmax", type=float, default=10.0, help="Integration time")
    p.add_argument(
        "--reverse",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Integrate backwards in time (default: on for exit launches)",
    )
    p.add_argument("--box-half-width", type=float, default=None, help="Domain box around the EP")
    p.set_defaults(handler=cmd_flow)

    p = sub.add_parser("simulate", help="Euler-Maruyama oracle")
    model_args(p)
    p.add_argument("--eps", type=float, required=True, help="Noise strength epsilon")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--paths", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--burn-in", type=int, default=None, help="Default: a tenth of the steps")
    p.add_argument("--ep", type=int, default=None, help="EP index (default: first attractor)")
    p.add_argument("--x0", help="Start point 'a,b,...' for exit times")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--covariance", action="store_true", help="Stationary covariance (default)")
    mode.add_argument("--exit-time", metavar="REGION", help="Exit region, e.g. 'x1 > 0'")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("kramers-demo", help="Kramers identities for one (gamma, U'')")
    p.add_argument("--gamma", type=float, default=3.0)
    p.add_argument("--u2", type=float, default=2.0)
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.set_defaults(handler=cmd_kramers_demo)
    return parser


def _configure_logging(level: str, quiet: bool) -> None:
    logging.basicConfig(
        level=logging.ERROR if quiet else getattr(logging, level.upper(), logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _load_settings() -> Settings:
    try:
        return get_settings()
    except ValidationError as e:
        raise InvalidSettings(
            f"invalid configuration: {e.error_count()} error(s)",
            json.loads(e.json(include_url=False)),
        ) from e


def main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and return the process exit code."""
    try:
        settings = _load_settings()
        args = build_parser(settings).parse_args(argv)
        _configure_logging(settings.log_level, args.quiet)
        if args.threads is not None:
            if args.threads < 1:
                raise ValueError("--threads must be at least 1")
            settings = settings.model_copy(update={"threads": args.threads})
        store = OutputStore(args.out) if args.out else None
        return args.handler(args, settings, store)
    except Exception as e:
        if not isinstance(e, (QuasipotError, ValueError, OSError)):
            logger.debug("unexpected failure", exc_info=True)
        sys.stderr.write(
            json.dumps(json_ready(_error_response(e)), ensure_ascii=False, separators=(",", ":"))
            + "\n"
        )
        return _exit_code(e)


if __name__ == "__main__":
    sys.exit(main())
