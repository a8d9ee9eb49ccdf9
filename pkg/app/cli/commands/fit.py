import argparse

from app.cli import deps
from app.cli.report import CommandOutput, plot_table
from app.mixture.classify import classify
from app.mixture.em import fit_with_insertion


def register(subparsers: argparse._SubParsersAction) -> None:  # type: ignore[type-arg]
    parser = subparsers.add_parser("fit", help="fit a fixed number of components")
    deps.add_fit_arguments(parser)
    parser.add_argument("--s", type=int, required=True, help="number of components")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> CommandOutput:
    data = deps.load_data(args.data)
    regime = deps.parse_noise(args.noise, data)
    result = fit_with_insertion(data, args.s, deps.family(args), regime, deps.fit_config(args))
    partition = classify(result.params, data)
    return CommandOutput(
        result={
            "n": data.n,
            "fit": result.model_dump(mode="json"),
            "labels": list(partition.labels),
        },
        plot=plot_table(("iteration", "loglik"), enumerate(result.trace)),
    )
