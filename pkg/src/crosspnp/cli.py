"""Command-line interface: run, steady, check, and sweep subcommands.

Exit codes: 0 success, 1 run or property failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .config import RunConfig, dump_toml, parse_config
from .geometry import ConfigError
from .output import write_outputs
from .solver import LinearSolveError, NewtonError, TimeLoopSettings, run as run_scenario
from .diagnostics import standard_analysis
from . import checks


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenario", default="calcium",
                        help="preset name or path to a TOML config file")
    parser.add_argument("--dt", type=float)
    parser.add_argument("--cells", type=int)
    parser.add_argument("--max-steps", dest="max_steps", type=int)
    parser.add_argument("--steady-tol", dest="steady_tol", type=float)
    parser.add_argument("--newton-tol", dest="newton_tol", type=float)
    parser.add_argument("--out")
    parser.add_argument("--cadence", type=int)
    parser.add_argument("--area-weighted", dest="area_weighted",
                        action="store_true", default=None)
    parser.add_argument("--poisson-area-weighting", choices=("on", "off"))
    parser.add_argument("--boundary-closure", choices=("full-cell", "half-cell"))
    parser.add_argument("--no-flux", dest="no_flux", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crosspnp",
        description="Finite-volume simulator for size-excluded ion transport",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="march a scenario and write its outputs")
    _add_common(run_p)
    steady_p = sub.add_parser("steady", help="run until the steady state is reached")
    _add_common(steady_p)
    sub.add_parser("check", help="run the built-in property suite")
    sweep_p = sub.add_parser("sweep", help="run several configs concurrently")
    sweep_p.add_argument("configs", nargs="+", help="TOML config files")
    sweep_p.add_argument("--workers", type=int, default=2)
    return parser


def _config_from_args(args) -> RunConfig:
    if os.path.exists(args.scenario):
        with open(args.scenario, "rb") as handle:
            doc = tomllib.load(handle)
    else:
        doc = {"scenario": args.scenario}
    overrides = {
        "dt": args.dt,
        "cells": args.cells,
        "max_steps": args.max_steps,
        "steady_tol": args.steady_tol,
        "newton_tol": args.newton_tol,
        "out": args.out,
        "cadence": args.cadence,
        "area_weighted": args.area_weighted,
        "boundary_closure": args.boundary_closure,
        "no_flux": args.no_flux,
    }
    if args.poisson_area_weighting is not None:
        overrides["poisson_area_weighting"] = args.poisson_area_weighting == "on"
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return parse_config(dump_toml(doc))


def _execute(config: RunConfig, require_steady: bool) -> int:
    settings = TimeLoopSettings(
        dt=config.scenario.dt,
        max_steps=config.scenario.max_steps,
        steady_tolerance=config.scenario.steady_tolerance,
        state_cadence=config.cadence,
    )
    result = run_scenario(config.scenario, settings)
    analysis = standard_analysis(result)
    files = write_outputs(result, config, analysis)
    last = result.reports[-1] if result.reports else None
    print(f"{config.scenario.name}: {result.termination} after "
          f"{len(result.reports)} steps"
          + (f", err={last.err:.3e}" if last else ""))
    for path in files:
        print(f"  wrote {path}")
    if require_steady and result.termination != "steady":
        print("steady state not reached", file=sys.stderr)
        return 1
    return 0


def _run_one(path: str) -> int:
    with open(path, "rb") as handle:
        text = handle.read().decode()
    config = parse_config(text)
    return _execute(config, require_steady=False)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "check":
            failures = checks.run_all()
            return 1 if failures else 0
        if args.command == "sweep":
            outs = set()
            configs = []
            for path in args.configs:
                with open(path, "rb") as handle:
                    config = parse_config(handle.read().decode())
                if config.out_dir in outs:
                    raise ConfigError(
                        f"sweep configs share output directory {config.out_dir!r}"
                    )
                outs.add(config.out_dir)
                configs.append(config)
            with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
                codes = list(pool.map(lambda c: _execute(c, False), configs))
            return 1 if any(codes) else 0
        config = _config_from_args(args)
        return _execute(config, require_steady=args.command == "steady")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NewtonError, LinearSolveError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
