import argparse
from enum import Enum

from app.cli import deps
from app.cli.report import CommandOutput, plot_table
from app.core.errors import InvalidArgumentError
from app.mixture.breakdown import (
    bic_gross_outlier_breakdown,
    bic_no_breakdown_certificate,
    improper_noise_certificate,
)
from app.schemas import BreakdownReport, ImproperNoise


class Certificate(str, Enum):
    IMPROPER_NOISE = "improper-noise"
    BIC = "bic"
    BIC_GROSS = "bic-gross"


def register(subparsers: argparse._SubParsersAction) -> None:  # type: ignore[type-arg]
    parser = subparsers.add_parser("bound", help="breakdown point certificates")
    deps.add_fit_arguments(parser)
    parser.add_argument(
        "--certificate",
        type=Certificate,
        choices=list(Certificate),
        default=Certificate.BIC,
    )
    parser.add_argument(
        "--s", type=int, default=None, help="order of the solution (BIC choice if omitted)"
    )
    parser.add_argument("--g-max", type=int, default=None)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> CommandOutput:
    data = deps.load_data(args.data)
    regime = deps.parse_noise(args.noise, data)
    fam = deps.family(args)
    cfg = deps.fit_config(args)
    if args.g_max is not None and args.g_max < 1:
        raise InvalidArgumentError(f"g-max must be >= 1, got {args.g_max}")

    report: BreakdownReport
    if args.certificate is Certificate.IMPROPER_NOISE:
        if not isinstance(regime, ImproperNoise):
            raise InvalidArgumentError("The improper-noise certificate needs --noise improper:<b>")
        if args.s is None:
            raise InvalidArgumentError("The improper-noise certificate needs --s")
        report = improper_noise_certificate(
            data, args.s, fam, regime.b, cfg.sigma0, cfg, args.g_max
        )
    elif args.certificate is Certificate.BIC:
        report = bic_no_breakdown_certificate(
            data, args.s, fam, regime, cfg.sigma0, cfg, args.g_max
        )
    else:
        report = bic_gross_outlier_breakdown(data, args.s, fam, regime, cfg.sigma0, cfg)

    if report.rows:
        plot = plot_table(
            ("g", "value", "holds"), ((r.g, r.value, r.holds) for r in report.rows)
        )
    else:
        exponents = report.details.get("log_exponents", {})
        plot = plot_table(("r", "log_exponent"), sorted(exponents.items()))
    return CommandOutput(result=report.model_dump(mode="json"), plot=plot)
