"""squarefield entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from dataclasses import replace

from squarefield import experiments
from squarefield.report import write_report
from squarefield.settings import (
    FORMATS,
    ConfigError,
    ExperimentConfig,
    load_config,
    parse_grid_flag,
    parse_number_list,
)

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def _configure_logging(debug: bool, log_file: str | None) -> None:
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))

    logging.basicConfig(
        level=logging.DEBUG if debug else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
        handlers=handlers,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="squarefield",
        description="Numerical experiments on conical and vertical square functions.",
    )
    parser.add_argument("--debug", action="store_true", help="log at DEBUG level")
    parser.add_argument("--log", metavar="FILE", help="also write the log to FILE")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("list", help="list the registered experiments")
    describe = commands.add_parser("describe", help="show defaults and tolerances")
    describe.add_argument("experiment")

    run = commands.add_parser("run", help="run one experiment")
    run.add_argument("experiment")
    run.add_argument("--config", metavar="FILE", help="JSON experiment config; flags win")
    run.add_argument("--grid", help="n=..,nx=..,nt=..,l=..,tmin=..,tmax=..")
    run.add_argument("--seed", type=int)
    run.add_argument("--p", help="comma-separated exponents")
    run.add_argument("--N", dest="scales", help="comma-separated family scales")
    run.add_argument("--operator", help="identity, smooth-scalar, checkerboard, complex-perturbed")
    run.add_argument("--weight", help="unit, power(a), plateau(c)")
    run.add_argument("--family", choices=("lower", "upper"))
    run.add_argument("--workers", type=int)
    run.add_argument("--out", metavar="FILE", help="write the report to FILE instead of stdout")
    run.add_argument("--format", choices=FORMATS)
    run.add_argument("--timings", action="store_true", help="append per-stage wall-clock times")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (if any) with the command-line flags applied over it."""
    config = load_config(args.config) if args.config else ExperimentConfig()
    config.experiment = args.experiment
    run = replace(config.run)
    output = replace(config.output)
    grid = parse_grid_flag(args.grid, config.grid) if args.grid else config.grid

    if args.seed is not None:
        run.seed = args.seed
    if args.p is not None:
        run.p_values = parse_number_list(args.p, "--p")
    if args.scales is not None:
        run.scales = parse_number_list(args.scales, "--N")
    for name in ("operator", "weight", "family", "workers"):
        value = getattr(args, name)
        if value is not None:
            setattr(run, name, value)
    if args.out is not None:
        output.path = args.out
    if args.format is not None:
        output.format = args.format
    if args.timings:
        output.timings = True
    return ExperimentConfig(config.experiment, grid, run, output).validate()


def _list() -> int:
    width = max(len(info.key) for info in experiments.EXPERIMENTS)
    for info in experiments.EXPERIMENTS:
        sys.stdout.write(f"{info.key.ljust(width)}  {info.label}\n")
    return EXIT_PASS


def _run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    report = experiments.run(config)
    write_report(report, config.output.format, config.output.path, config.output.timings)
    logger.info("%s finished: %s", config.experiment, "pass" if report.passed else "fail")
    return EXIT_PASS if report.passed else EXIT_FAIL


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, run the command and return the process exit status."""
    args = build_parser().parse_args(argv)
    _configure_logging(args.debug, args.log)
    try:
        if args.command == "list":
            return _list()
        if args.command == "describe":
            sys.stdout.write(experiments.describe(args.experiment))
            return EXIT_PASS
        return _run(args)
    except ConfigError as e:
        logger.error("%s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
