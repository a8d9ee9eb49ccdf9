import logging
import math
from collections.abc import Sequence

import numpy as np

from app.core.config import settings
from app.core.errors import InvalidArgumentError
from app.mixture.em import Regime, fit, insertion_starts
from app.mixture.families import Family
from app.schemas import (
    CriterionKind,
    Dataset,
    FitConfig,
    FitResult,
    MixtureParams,
    OrderFit,
    SelectionResult,
)

logger = logging.getLogger(__name__)


def free_parameters(s: int, has_noise: bool) -> int:
    """3s - 1 for a plain mixture, 3s with a noise component"""
    return 3 * s if has_noise else 3 * s - 1


def criterion_value(loglik: float, k: int, n: int, kind: CriterionKind) -> float:
    """AIC = 2L - 2k, BIC = 2L - k log n; larger is better"""
    if n < 1 or k < 1:
        raise InvalidArgumentError(f"Need n >= 1 and k >= 1, got n={n}, k={k}")
    if kind is CriterionKind.AIC:
        return 2.0 * loglik - 2.0 * k
    return 2.0 * loglik - k * math.log(n)


def select_order(
    data: Dataset,
    fam: Family,
    regime: Regime,
    cfg: FitConfig,
    kind: CriterionKind = CriterionKind.BIC,
    s_max: int | None = None,
    extra_starts: Sequence[MixtureParams] = (),
) -> SelectionResult:
    """
    Sweep s = 1..min(s_max, distinct points) and return the criterion maximizer,
    the smallest s on ties. Each order also starts from insertions into the
    previous order's solution and from any extra start of that order.
    """
    cap = s_max if s_max is not None else settings.S_MAX
    if cap < 1:
        raise InvalidArgumentError(f"s_max must be >= 1, got {cap}")
    upper = min(cap, data.distinct)
    capped = cap < data.distinct
    if capped:
        logger.info(
            f"Order sweep capped at s={cap} below the distinct-point bound "
            f"{data.distinct}"
        )
    has_noise = regime.bind(data).has_noise

    per_s: list[OrderFit] = []
    previous: FitResult | None = None
    for s in range(1, upper + 1):
        starts = [p for p in extra_starts if p.s == s]
        if previous is not None:
            starts.extend(insertion_starts(previous.params, data, cfg.sigma0))
        result = fit(data, s, fam, regime, cfg, starts)
        k = free_parameters(s, has_noise)
        value = criterion_value(result.loglik, k, data.n, kind)
        logger.info(
            f"{kind.value.upper()} sweep s={s}: loglik={result.loglik:.4f} "
            f"criterion={value:.4f}"
        )
        per_s.append(
            OrderFit(s=s, loglik=result.loglik, k=k, criterion_value=value, fit=result)
        )
        previous = result

    values = np.array([entry.criterion_value for entry in per_s])
    # argmax returns the first maximum, i.e. the smallest s
    s_n = per_s[int(np.argmax(values))].s
    all_converged = all(entry.fit.converged for entry in per_s)
    if not all_converged:
        logger.warning("Some fits in the order sweep did not converge")
    return SelectionResult(
        s_n=s_n,
        criterion=kind,
        per_s=tuple(per_s),
        capped=capped,
        all_converged=all_converged,
    )
