"""Command-line entry point: `fermion-limits --preset theorem-a03`."""

import argparse
import logging
import sys
from typing import Optional, Sequence

from fermion_limits.config import ExperimentConfig, list_presets
from fermion_limits.errors import (
    AcceptanceError,
    CapacityError,
    ConfigError,
    ContractError,
    DomainError,
    NumericalError,
    ObserverError,
    StateValidationError,
)
from fermion_limits.workbench import Workbench

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_ACCEPTANCE = 3

NUMERICAL_FAILURES = (
    NumericalError,
    CapacityError,
    ContractError,
    DomainError,
    StateValidationError,
    ObserverError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fermion-limits",
        description="Run mean-field and semiclassical limit experiments.",
    )
    parser.add_argument("--config", help="path to a YAML or JSON experiment file")
    parser.add_argument("--preset", help="name of a preset shipped with the package")
    parser.add_argument("--output", help="output directory, overrides the config")
    parser.add_argument("--jobs", type=int, help="worker processes for sweeps")
    parser.add_argument("--seed", type=int, help="random seed, overrides the config")
    parser.add_argument(
        "--list-presets", action="store_true", help="print preset names and exit"
    )
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log DEBUG records to stderr"
    )
    return parser


def configure_logging(verbose: bool = False) -> None:
    package = logging.getLogger("fermion_limits")
    for existing in list(package.handlers):
        if existing.get_name() == "fermion-limits-stderr":
            package.removeHandler(existing)
    handler = logging.StreamHandler(sys.stderr)
    handler.set_name("fermion-limits-stderr")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler.setLevel(logging.DEBUG if verbose else logging.INFO)
    package.addHandler(handler)
    package.setLevel(logging.DEBUG if verbose else logging.INFO)


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """
    Loads the experiment named on the command line and applies overrides.

    Raises:
        ConfigError: unless exactly one of --config and --preset is given,
            or if an override is out of range
    """
    if (args.config is None) == (args.preset is None):
        raise ConfigError("Give exactly one of --config and --preset")
    if args.config is not None:
        config = ExperimentConfig.from_file(args.config)
    else:
        config = ExperimentConfig.from_preset(args.preset)
    if args.jobs is not None and args.jobs < 1:
        raise ConfigError(f"--jobs must be at least 1, got {args.jobs}")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
    return config.override(output=args.output, jobs=args.jobs, seed=args.seed)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Runs one experiment and returns the exit status: 0 pass, 1 configuration
    error, 2 numerical failure, 3 acceptance-band failure.
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    if args.list_presets:
        print("\n".join(list_presets()))
        return EXIT_OK
    try:
        config = load_config(args)
        with Workbench(config) as bench:
            summary = bench.run()
    except ConfigError as exc:
        logger.error(f"(CLI) configuration error: {exc}")
        return EXIT_CONFIG
    except AcceptanceError as exc:
        logger.error(f"(CLI) {exc}")
        return EXIT_ACCEPTANCE
    except NUMERICAL_FAILURES as exc:
        logger.error(f"(CLI) {type(exc).__name__}: {exc}")
        return EXIT_NUMERICAL
    logger.info(f"(CLI) {summary['kind']} passed, artifacts in {config['output']}")
    return EXIT_OK
