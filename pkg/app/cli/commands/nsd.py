import argparse

from app.cli import deps
from app.cli.report import CommandOutput, plot_table
from app.mixture.calibrate import nsd


def register(subparsers: argparse._SubParsersAction) -> None:  # type: ignore[type-arg]
    parser = subparsers.add_parser("nsd", help="Normal standard dataset")
    parser.add_argument("--a", type=float, default=0.0, help="location")
    parser.add_argument("--var", type=float, default=1.0, help="variance")
    parser.add_argument("--n", type=int, required=True, help="number of points")
    deps.add_output_arguments(parser, formats=("lines", "json", "csv"))
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> CommandOutput:
    data = nsd(args.a, args.var, args.n)
    return CommandOutput(
        result={"values": list(data.values)},
        plot=plot_table(("i", "x"), enumerate(data.values, start=1)),
    )
