import argparse

from app.cli import deps
from app.cli.report import CommandOutput, plot_table
from app.mixture.breakdown import empirical_contamination_probe
from app.mixture.classify import classify
from app.mixture.em import fit_with_insertion
from app.mixture.selection import select_order
from app.schemas import EstimatedOrder, FixedOrder, ReportKind


def register(subparsers: argparse._SubParsersAction) -> None:  # type: ignore[type-arg]
    parser = subparsers.add_parser(
        "classify", help="cluster labels, optionally compared after adding points"
    )
    deps.add_fit_arguments(parser)
    deps.add_criterion_argument(parser)
    parser.add_argument(
        "--s", type=int, default=None, help="fixed order (estimated if omitted)"
    )
    parser.add_argument("--added", default=None, help="comma-separated added points")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> CommandOutput:
    data = deps.load_data(args.data)
    regime = deps.parse_noise(args.noise, data)
    fam = deps.family(args)
    cfg = deps.fit_config(args)
    if args.s is not None:
        result = fit_with_insertion(data, args.s, fam, regime, cfg)
    else:
        result = select_order(data, fam, regime, cfg, args.criterion, args.s_max).selected
    partition = classify(result.params, data)
    payload = {
        "n": data.n,
        "params": result.params.model_dump(mode="json"),
        "labels": list(partition.labels),
        "cluster_sizes": {k: len(v) for k, v in partition.clusters.items()},
    }

    added = deps.parse_added(args.added)
    if added:
        mode: FixedOrder | EstimatedOrder = (
            FixedOrder(s=args.s)
            if args.s is not None
            else EstimatedOrder(criterion=args.criterion, s_max=args.s_max)
        )
        report = empirical_contamination_probe(
            data, added, fam, regime, cfg.sigma0, cfg, mode
        ).model_copy(update={"kind": ReportKind.CLASSIFICATION_EMPIRICAL})
        payload["contamination"] = report.model_dump(mode="json")
        verdicts = report.verdict.clusters if report.verdict else ()
        plot = plot_table(
            ("label", "size", "gamma_star", "broke"),
            ((v.label, v.size, float(v.gamma_star), v.broke) for v in verdicts),
        )
    else:
        plot = plot_table(
            ("index", "x", "label"),
            (
                (i, x, label)
                for i, (x, label) in enumerate(
                    zip(data.values, partition.labels, strict=True)
                )
            ),
        )
    return CommandOutput(result=payload, plot=plot)
