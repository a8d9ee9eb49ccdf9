import argparse

from app.cli import deps
from app.cli.report import CommandOutput, plot_table
from app.mixture.classify import classify
from app.mixture.selection import select_order


def register(subparsers: argparse._SubParsersAction) -> None:  # type: ignore[type-arg]
    parser = subparsers.add_parser(
        "select", help="choose the number of components by AIC or BIC"
    )
    deps.add_fit_arguments(parser)
    deps.add_criterion_argument(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> CommandOutput:
    data = deps.load_data(args.data)
    regime = deps.parse_noise(args.noise, data)
    selection = select_order(
        data, deps.family(args), regime, deps.fit_config(args), args.criterion, args.s_max
    )
    partition = classify(selection.selected.params, data)
    return CommandOutput(
        result={
            "n": data.n,
            "selection": selection.model_dump(mode="json"),
            "labels": list(partition.labels),
        },
        plot=plot_table(
            ("s", "loglik", "k", "criterion"),
            ((e.s, e.loglik, e.k, e.criterion_value) for e in selection.per_s),
        ),
    )
