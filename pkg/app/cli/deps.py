import argparse
import logging
from collections.abc import Sequence
from pathlib import Path

from app.core.config import settings
from app.core.errors import InvalidArgumentError
from app.mixture.em import Regime
from app.mixture.families import Family, family_from_spec
from app.schemas import (
    CriterionKind,
    Dataset,
    FitConfig,
    ImproperNoise,
    NoNoise,
    RangeUniform,
)

logger = logging.getLogger(__name__)


def parse_values(text: str, source: str = "<data>") -> Dataset:
    """
    One decimal per line. Blank lines and everything after ``#`` are ignored;
    the decimal point is always ``.``.
    """
    values = []
    for number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        try:
            values.append(float(content))
        except ValueError:
            raise InvalidArgumentError(f"{source}:{number}: not a number: {content!r}")
    if not values:
        raise InvalidArgumentError(f"{source}: no data values")
    try:
        return Dataset.from_values(values)
    except ValueError as exc:
        raise InvalidArgumentError(f"{source}: {exc}")


def load_data(path: Path) -> Dataset:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidArgumentError(f"Cannot read {path}: {exc.strerror}")
    data = parse_values(text, str(path))
    logger.info(f"Loaded {data.n} values from {path}")
    return data


def parse_noise(spec: str, data: Dataset) -> Regime:
    """``none``, ``range`` (uniform on the data range) or ``improper:<b>``"""
    name, _, parameter = spec.strip().lower().partition(":")
    if name == "none" and not parameter:
        return NoNoise()
    if name == "range" and not parameter:
        if data.xmax == data.xmin:
            raise InvalidArgumentError("Range noise needs at least two distinct values")
        return RangeUniform.from_dataset(data)
    if name == "improper":
        try:
            b = float(parameter)
        except ValueError:
            raise InvalidArgumentError(f"Invalid noise level in {spec!r}")
        if not b > 0.0:
            raise InvalidArgumentError(f"Noise level must be positive, got {b}")
        return ImproperNoise(b=b)
    raise InvalidArgumentError(f"Unknown noise regime {spec!r}")


def parse_added(text: str | None) -> list[float]:
    """Comma-separated decimals, e.g. ``50,50,50``"""
    if not text:
        return []
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise InvalidArgumentError(f"Invalid list of added points {text!r}")


def family(args: argparse.Namespace) -> Family:
    return family_from_spec(args.family)


def fit_config(args: argparse.Namespace) -> FitConfig:
    if not args.sigma0 > 0.0:
        raise InvalidArgumentError(f"sigma0 must be positive, got {args.sigma0}")
    if args.restarts < 1:
        raise InvalidArgumentError(f"restarts must be >= 1, got {args.restarts}")
    overrides: dict[str, float | int] = {
        "sigma0": args.sigma0,
        "restarts": args.restarts,
        "seed": args.seed,
    }
    if args.threads is not None:
        overrides["threads"] = args.threads
    return FitConfig(**overrides)


def add_output_arguments(
    parser: argparse.ArgumentParser,
    formats: Sequence[str] = ("json", "csv"),
) -> None:
    parser.add_argument(
        "--output", type=Path, default=None, help="report path (stdout if omitted)"
    )
    parser.add_argument(
        "--format",
        choices=list(formats),
        default=formats[0],
        help="json report, or plot data as csv",
    )
    parser.add_argument(
        "--plot-data", type=Path, default=None, help="also write plot data csv here"
    )


def add_fit_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", type=Path, required=True, help="one value per line")
    parser.add_argument(
        "--family", default="normal", help="normal | t:<nu> | huber:<k>"
    )
    parser.add_argument("--noise", default="none", help="none | range | improper:<b>")
    parser.add_argument("--sigma0", type=float, default=settings.SIGMA0)
    parser.add_argument("--restarts", type=int, default=settings.RESTARTS)
    parser.add_argument("--seed", type=int, default=settings.SEED)
    parser.add_argument("--threads", type=int, default=None)
    add_output_arguments(parser)


def add_criterion_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--criterion",
        type=CriterionKind,
        choices=list(CriterionKind),
        default=CriterionKind.BIC,
    )
    parser.add_argument("--s-max", type=int, default=None)
