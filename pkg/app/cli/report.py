import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from collections.abc import Iterable, Sequence
from enum import Enum
from pathlib import Path
from typing import Any

from pydantic import BaseModel

from app.core.config import settings

logger = logging.getLogger(__name__)


class PlotData(BaseModel):
    """Columns and rows of a csv plot table"""

    header: tuple[str, ...]
    rows: list[tuple[Any, ...]] = []


class CommandOutput(BaseModel):
    """What a subcommand hands back to the front end"""

    result: dict[str, Any]
    plot: PlotData | None = None


def round_significant(value: Any, digits: int | None = None) -> Any:
    """Round every float in a JSON-like structure; non-finite floats become null"""
    digits = digits or settings.SIGNIFICANT_DIGITS
    if isinstance(value, bool):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            return None
        return float(f"{value:.{digits}g}")
    if isinstance(value, dict):
        return {str(k): round_significant(v, digits) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [round_significant(v, digits) for v in value]
    return value


def echo_config(args: argparse.Namespace) -> dict[str, Any]:
    config = {}
    for key, value in sorted(vars(args).items()):
        if callable(value):
            continue
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, Enum):
            value = value.value
        config[key] = value
    return config


def argv_from_config(command: str, config: dict[str, Any]) -> list[str]:
    """Command line that reproduces a report from its echoed config"""
    argv = ["--verbose"] if config.get("verbose") else []
    argv.append(command)
    for key, value in sorted(config.items()):
        if key in ("command", "verbose") or value is None:
            continue
        argv += [f"--{key.replace('_', '-')}", str(value)]
    return argv


def build_report(command: str, args: argparse.Namespace, output: CommandOutput) -> dict[str, Any]:
    return {
        "schema_version": settings.REPORT_SCHEMA_VERSION,
        "command": command,
        "config": round_significant(echo_config(args)),
        "result": round_significant(output.result),
    }


def render_json(report: dict[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def render_csv(plot: PlotData) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(plot.header)
    for row in plot.rows:
        writer.writerow(round_significant(list(row)))
    return buffer.getvalue()


def render_lines(values: Iterable[float]) -> str:
    return "".join(f"{round_significant(float(v))!r}\n" for v in values)


def write_atomic(path: Path, content: str) -> None:
    """Write to a temporary file next to ``path`` and rename it into place"""
    directory = path.parent if str(path.parent) else Path(".")
    directory.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(
        "w", encoding="utf-8", dir=directory, prefix=f".{path.name}.", delete=False
    ) as handle:
        handle.write(content)
        temporary = Path(handle.name)
    try:
        os.replace(temporary, path)
    except OSError:
        temporary.unlink(missing_ok=True)
        raise
    logger.info(f"Wrote {path}")


def emit(content: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(content)
    else:
        write_atomic(path, content)


def plot_table(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> PlotData:
    return PlotData(header=tuple(header), rows=[tuple(row) for row in rows])
