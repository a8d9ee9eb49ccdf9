import argparse
from enum import Enum

from app.cli import deps
from app.cli.report import CommandOutput, plot_table
from app.core.errors import InvalidArgumentError
from app.mixture.breakdown import (
    THRESHOLD_CEILING,
    empirical_contamination_probe,
    empirical_outlier_threshold,
)
from app.schemas import EstimatedOrder, FixedOrder


class SearchMode(str, Enum):
    OUTLIER_THRESHOLD = "outlier-threshold"
    CONTAMINATION = "contamination"


def register(subparsers: argparse._SubParsersAction) -> None:  # type: ignore[type-arg]
    parser = subparsers.add_parser("search", help="empirical breakdown searches")
    deps.add_fit_arguments(parser)
    deps.add_criterion_argument(parser)
    parser.add_argument(
        "--mode",
        type=SearchMode,
        choices=list(SearchMode),
        default=SearchMode.OUTLIER_THRESHOLD,
    )
    parser.add_argument("--s", type=int, default=None)
    parser.add_argument("--added", default=None, help="comma-separated added points")
    parser.add_argument("--ceiling", type=float, default=THRESHOLD_CEILING)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> CommandOutput:
    data = deps.load_data(args.data)
    regime = deps.parse_noise(args.noise, data)
    fam = deps.family(args)
    cfg = deps.fit_config(args)

    if args.mode is SearchMode.OUTLIER_THRESHOLD:
        if args.s is None:
            raise InvalidArgumentError("The outlier threshold search needs --s")
        search = empirical_outlier_threshold(
            data, args.s, fam, regime, cfg.sigma0, cfg, args.ceiling
        )
        return CommandOutput(
            result=search.model_dump(mode="json"),
            plot=plot_table(
                ("y", "broke", "loglik"),
                ((p.y, p.broke, p.loglik) for p in search.probes),
            ),
        )

    added = deps.parse_added(args.added)
    if not added:
        raise InvalidArgumentError("The contamination probe needs --added")
    mode: FixedOrder | EstimatedOrder = (
        FixedOrder(s=args.s)
        if args.s is not None
        else EstimatedOrder(criterion=args.criterion, s_max=args.s_max)
    )
    report = empirical_contamination_probe(data, added, fam, regime, cfg.sigma0, cfg, mode)
    verdicts = report.verdict.clusters if report.verdict else ()
    return CommandOutput(
        result=report.model_dump(mode="json"),
        plot=plot_table(
            ("label", "size", "gamma_star", "broke"),
            ((v.label, v.size, float(v.gamma_star), v.broke) for v in verdicts),
        ),
    )
