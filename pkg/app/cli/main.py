import argparse
import logging
import sys
from collections.abc import Sequence

from pydantic import ValidationError

from app.cli.commands import bound, calibrate, classify, fit, nsd, search, select
from app.cli.report import build_report, emit, render_csv, render_json, render_lines
from app.core.config import settings
from app.core.errors import InvalidArgumentError, MixtureError

logger = logging.getLogger(__name__)

COMMANDS = (fit, select, classify, bound, search, calibrate, nsd)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=settings.PROJECT_NAME,
        description="Constrained ML for location-scale mixtures and their breakdown",
    )
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def run(args: argparse.Namespace) -> None:
    output = args.handler(args)
    if args.format == "lines":
        emit(render_lines(output.result["values"]), args.output)
        return
    if args.format == "csv":
        if output.plot is None:
            raise InvalidArgumentError(f"{args.command} has no csv output")
        emit(render_csv(output.plot), args.output)
    else:
        emit(render_json(build_report(args.command, args, output)), args.output)
    if args.plot_data is not None and output.plot is not None:
        emit(render_csv(output.plot), args.plot_data)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else settings.LOG_LEVEL)
    try:
        run(args)
    except MixtureError as exc:
        logger.debug(f"{args.command} failed", exc_info=True)
        print(f"{parser.prog} {args.command}: {exc.detail}", file=sys.stderr)
        return exc.exit_code
    except ValidationError as exc:
        print(f"{parser.prog} {args.command}: {exc}", file=sys.stderr)
        return InvalidArgumentError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
