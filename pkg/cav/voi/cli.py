"""Command-line entry point: cav-voi run | validate | plotdata."""

import argparse
import json
import logging
import sys
from typing import List, NoReturn, Optional, Sequence

from cav.voi import config as config_io
from cav.voi.data.enums import Scenario
from cav.voi.data.params import ExperimentConfig
from cav.voi.error_codes import EXIT_OK, EXIT_USAGE, format_error_message
from cav.voi.exceptions import ConfigError, VoIError
from cav.voi.runner import ExperimentRunner
from cav.voi.scenarios import FIGURES, emit_plotdata

logger = logging.getLogger(__name__)

COMMANDS = ("run", "validate", "plotdata")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that leaves the exit code to main()."""

    def error(self, message: str) -> NoReturn:
        raise _UsageError(f"{self.prog}: {message}")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="YAML experiment configuration")
    parser.add_argument("--scenario", choices=[s.value for s in Scenario])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--episodes", type=int)
    parser.add_argument("--out", metavar="DIR", dest="out_dir")
    parser.add_argument("--set", metavar="KEY=VALUE", dest="overrides", action="append",
                        default=[], help="override a config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cav-voi", description="Value-of-information experiments for "
                                                 "connected vehicle following")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario and write its artifacts")
    _add_config_flags(run)

    validate = sub.add_parser("validate", help="check a configuration without running")
    _add_config_flags(validate)

    plot = sub.add_parser("plotdata", help="write a tidy plot bundle from a run directory")
    plot.add_argument("--out", metavar="DIR", dest="out_dir", required=True)
    plot.add_argument("--figure", choices=FIGURES, required=True)
    return parser


def _split_log_level(argv: List[str]) -> List[str]:
    """Move --log-level in front of the command and default the command to run."""
    head: List[str] = []
    rest: List[str] = []
    i = 0
    while i < len(argv):
        item = argv[i]
        if item == "--log-level" and i + 1 < len(argv):
            head.extend(argv[i:i + 2])
            i += 2
            continue
        if item.startswith("--log-level="):
            head.append(item)
        else:
            rest.append(item)
        i += 1
    if not rest or rest[0] not in COMMANDS and rest[0] not in ("-h", "--help"):
        rest.insert(0, "run")
    return head + rest


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    return config_io.build_config(
        config_path=args.config,
        scenario=args.scenario,
        seed=args.seed,
        episodes=args.episodes,
        out_dir=args.out_dir,
        overrides=args.overrides,
    )


def _cmd_validate(args: argparse.Namespace) -> int:
    report = config_io.validate(_config_from_args(args))
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.valid else EXIT_USAGE


def _cmd_run(args: argparse.Namespace) -> int:
    config = config_io.check(_config_from_args(args))
    result = ExperimentRunner().execute(config)
    print(json.dumps({"out_dir": result.out_dir, "passed": result.passed}, indent=2))
    return result.exit_code


def _cmd_plotdata(args: argparse.Namespace) -> int:
    print(emit_plotdata(args.out_dir, args.figure))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI.

    Returns:
        0 when the run passed, 1 on usage or configuration errors, 2 when a scenario's
        acceptance checks failed
    """
    parser = build_parser()
    try:
        args = parser.parse_args(_split_log_level(list(sys.argv[1:] if argv is None else argv)))
    except _UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)

    handlers = {"run": _cmd_run, "validate": _cmd_validate, "plotdata": _cmd_plotdata}
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        for violation in e.violations:
            logger.error("config violation: %s", violation)
        print(format_error_message(e), file=sys.stderr)
        return EXIT_USAGE
    except VoIError as e:
        print(format_error_message(e), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
