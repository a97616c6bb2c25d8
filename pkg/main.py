"""
Current-Harnessing MPC - command-line entry point.

    chmpc run --config data/scenarios/descent_desk.yaml --out out/descent
    chmpc compare --config data/scenarios/horizontal_desk.yaml --out out/horizontal
    chmpc fit-thruster --config data/thrusters/t200_16v.cal --out out/thruster
    chmpc check --config data/scenarios/smoothed_grid.yaml
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from cli.commands import cmd_check, cmd_compare, cmd_fit_thruster, cmd_run
from utils.logging_setup import get_logger


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chmpc",
        description="Current-harnessing stage-gated MPC for a 6-DOF underwater vehicle.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("run", "Simulate the configured controller mode"),
        ("compare", "Simulate every configured mode and report deltas"),
        ("check", "Run gradient, Riccati, allocation and field checks"),
    ):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", type=Path, required=True, help="Scenario YAML file")
        sub.add_argument("--out", type=Path, default=None if name == "check" else Path("out"),
                         help="Output directory")

    fit = commands.add_parser("fit-thruster", help="Fit the thruster power law")
    fit.add_argument("--config", "--calibration", dest="calibration", type=Path, required=True,
                     help="THRUSTCAL v1 table (--calibration is accepted as an alias)")
    fit.add_argument("--out", type=Path, default=None,
                     help="Output directory (default: next to the calibration file)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    get_logger()
    if args.command == "run":
        return cmd_run(args.config, args.out)
    if args.command == "compare":
        return cmd_compare(args.config, args.out)
    if args.command == "check":
        return cmd_check(args.config, args.out)
    return cmd_fit_thruster(args.calibration, args.out)


if __name__ == "__main__":
    sys.exit(main())
