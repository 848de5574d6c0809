"""Command line: ``gridcosim run <scenario> [--seed N] [--t-end S] [--out DIR] [--log-level L]``.

Exit status is 0 on success, 1 for configuration errors and 2 for failures
while simulating.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from .errors import ConfigError, SimulationError
from .scenario import SUMMARY_KEYS, load_scenario, run_scenario
from .timeseries import TimeSeriesError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridcosim", description="Building/grid/comms co-simulation runner")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario directory or YAML file")
    run.add_argument("scenario", help="scenario directory (containing scenario.yaml) or file")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--t-end", type=float, default=None, help="override the end time [s]")
    run.add_argument("--out", default=None, help="output directory (default: the scenario's 'output')")
    run.add_argument("--log-level", default="WARNING",
                     choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"], type=str.upper)
    return parser


def _cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None or args.t_end is not None:
            scenario = scenario.with_overrides(seed=args.seed, t_end=args.t_end)
    except (ConfigError, TimeSeriesError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_scenario(scenario, args.out)
    except (ConfigError, TimeSeriesError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({k: result.summary[k] for k in SUMMARY_KEYS}, indent=2))
    print(f"artifacts: {result.out_dir}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return _cmd_run(args)
    return EXIT_CONFIG  # pragma: no cover - argparse enforces the choices


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
