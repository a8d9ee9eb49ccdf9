import argparse

from app.cli import deps
from app.cli.report import CommandOutput, plot_table
from app.core.config import settings
from app.mixture.calibrate import calibrate_c0, tuning_from_trace
from app.mixture.families import family_from_spec
from app.schemas import FitConfig


def register(subparsers: argparse._SubParsersAction) -> None:  # type: ignore[type-arg]
    parser = subparsers.add_parser(
        "calibrate", help="tune the scale floor and the improper noise level"
    )
    parser.add_argument("--n", type=int, default=50, help="calibration sample size")
    parser.add_argument(
        "--p",
        type=float,
        default=0.95,
        help="probability that a clean sample holds at least one alpha_n-outlier",
    )
    parser.add_argument("--sigma-max", type=float, default=5.0)
    parser.add_argument("--family", default="normal")
    parser.add_argument("--restarts", type=int, default=settings.RESTARTS)
    parser.add_argument("--seed", type=int, default=settings.SEED)
    parser.add_argument("--threads", type=int, default=None)
    deps.add_output_arguments(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> CommandOutput:
    fam = family_from_spec(args.family)
    overrides: dict[str, int] = {"restarts": args.restarts, "seed": args.seed}
    if args.threads is not None:
        overrides["threads"] = args.threads
    trace = calibrate_c0(args.n, args.p, fam, FitConfig(**overrides))
    tuning = tuning_from_trace(trace, args.n, args.p, args.sigma_max, fam)
    return CommandOutput(
        result={
            "tuning": tuning.model_dump(mode="json"),
            "trace": trace.model_dump(mode="json"),
        },
        plot=plot_table(("c0", "bic_gap"), sorted(trace.steps)),
    )
