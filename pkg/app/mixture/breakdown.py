import logging
import math
from collections.abc import Iterator, Mapping, Sequence
from decimal import ROUND_FLOOR, Context, Decimal
from fractions import Fraction
from itertools import permutations
from typing import Any

import numpy as np
from scipy import special

from app.core.errors import (
    HypothesisViolatedError,
    InvalidArgumentError,
    NonConvergenceError,
)
from app.mixture.classify import (
    classification_breakdown_check,
    classify,
    induced_partition,
)
from app.mixture.em import Regime, e_step, fit, fit_with_insertion
from app.mixture.families import Family
from app.mixture.model import log_joint
from app.mixture.selection import criterion_value, free_parameters, select_order
from app.schemas import (
    NOISE_LABEL,
    BreakdownReport,
    ComponentMatch,
    ConditionRow,
    CriterionKind,
    Dataset,
    DecompositionCheck,
    DivergenceDemo,
    EstimatedOrder,
    FitConfig,
    FitResult,
    FixedOrder,
    ImproperNoise,
    MixtureParams,
    NoNoise,
    RangeUniform,
    ReportKind,
    ThresholdProbe,
    ThresholdSearch,
)

logger = logging.getLogger(__name__)

# Box around an original component inside which a refit component still counts
# as the same component
LOCATION_BOX = 5.0
SCALE_BOX = 10.0
PROPORTION_BOX = 10.0

THRESHOLD_START_OFFSET = 10.0
THRESHOLD_CEILING = 1e10
THRESHOLD_REL_TOL = 0.01

# Largest decimal length of a reported gross outlier count
GROSS_COUNT_DIGITS = 4000


def f_max(fam: Family, sigma0: float) -> float:
    """Largest density value any component can reach under the scale floor"""
    return fam.f0 / sigma0


def order_fits(
    data: Dataset, s: int, fam: Family, regime: Regime, cfg: FitConfig
) -> dict[int, FitResult]:
    """Best fits for r = 1..s, each started also from the r - 1 solution"""
    if s > data.distinct:
        raise InvalidArgumentError(
            f"Cannot fit {s} components to {data.distinct} distinct points"
        )
    selection = select_order(data, fam, regime, cfg, s_max=s)
    fits = {entry.s: entry.fit for entry in selection.per_s}
    unconverged = [r for r, result in fits.items() if not result.converged]
    if unconverged:
        raise NonConvergenceError(
            f"Fits for r={unconverged} did not converge within {cfg.max_iters} "
            "iterations"
        )
    return fits


def _certificate(
    kind: ReportKind,
    n: int,
    g_star: int,
    top: float,
    rows: list[ConditionRow],
    fits: dict[int, FitResult],
    details: dict[str, Any],
) -> BreakdownReport:
    bound, minimal = BreakdownReport.rational_bounds(g_star, n)
    return BreakdownReport(
        kind=kind,
        n=n,
        g_star=g_star,
        bound=bound,
        minimal_breakdown=minimal,
        f_max=top,
        rows=tuple(rows),
        fits=fits,
        details=details,
    )


# --- Improper noise certificate --- #


def improper_rhs(params: MixtureParams, data: Dataset, g: int, top: float) -> float:
    """Right-hand side of the improper-noise certificate for g added points"""
    if not isinstance(params.regime, ImproperNoise):
        raise InvalidArgumentError("The certificate needs an improper noise fit")
    n = data.n
    level = (params.pi0 + g / n) * params.regime.b
    components = np.exp(special.logsumexp(log_joint(params, data.array)[:, 1:], axis=1))
    return (
        math.fsum(np.log(components + level).tolist())
        + g * math.log(level)
        + (n + g) * math.log(n / (n + g))
        - g * math.log(top)
    )


def improper_noise_certificate(
    data: Dataset,
    s: int,
    fam: Family,
    b: float,
    sigma0: float,
    cfg: FitConfig,
    g_max: int | None = None,
) -> BreakdownReport:
    """
    Certify that one component of the s-component improper-noise fit survives
    the addition of g points: the best fit with fewer components must stay below
    the right-hand side evaluated at the s-component solution.
    """
    if s < 2:
        raise InvalidArgumentError("The certificate compares against r < s, need s >= 2")
    top = f_max(fam, sigma0)
    if not top > b:
        raise HypothesisViolatedError(
            f"f(0)/sigma0 = {top} must exceed the noise level b = {b}"
        )
    g_max = g_max if g_max is not None else 2 * data.n
    fits = order_fits(data, s, fam, ImproperNoise(b=b), cfg.with_sigma0(sigma0))
    competitor = max(fits[r].loglik for r in range(1, s))

    rows = []
    for g in range(1, g_max + 1):
        rhs = improper_rhs(fits[s].params, data, g, top)
        rows.append(
            ConditionRow(
                g=g,
                value=rhs - competitor,
                holds=competitor < rhs,
                per_r={r: rhs - fits[r].loglik for r in range(1, s)},
            )
        )
    g_star = max((row.g for row in rows if row.holds), default=0)
    logger.info(f"Improper noise certificate: g*={g_star} for n={data.n}, s={s}")
    return _certificate(
        ReportKind.IMPROPER_NOISE_CERT,
        data.n,
        g_star,
        top,
        rows,
        fits,
        {"b": b, "competitor_loglik": competitor},
    )


# --- BIC certificates --- #


def bic_condition(
    logliks: Mapping[int, float], s: int, n: int, g: int
) -> tuple[float, dict[int, float]]:
    """Minimum over r < s of the no-breakdown condition, plus the per-r terms"""
    per_r = {
        r: logliks[s]
        - logliks[r]
        - 0.5 * (5 * g + 3 * s - 3 * r + 2 * n) * math.log(n + g)
        + n * math.log(n)
        for r in range(1, s)
    }
    return min(per_r.values()), per_r


def gross_outlier_size(
    logliks: Mapping[int, float], s: int, n: int
) -> tuple[int, dict[int, float]]:
    """
    Smallest g for which some r < s satisfies
    L_s - L_r < 3/2 (s - r) log(n + g), i.e. n + g > exp(2 (L_s - L_r) / (3 (s - r))).
    """
    exponents = {
        r: 2.0 * (logliks[s] - logliks[r]) / (3.0 * (s - r)) for r in range(1, s)
    }
    easiest = min(exponents.values())
    digits = max(int(easiest / math.log(10.0)), 0) + 1
    if digits > GROSS_COUNT_DIGITS:
        raise InvalidArgumentError(
            f"Gross outlier count exp({easiest:.1f}) has more than "
            f"{GROSS_COUNT_DIGITS} digits"
        )
    # Exact integer part of exp(easiest), also beyond the float range
    context = Context(prec=digits + 30)
    n_plus_g = context.exp(Decimal(easiest)).to_integral_value(rounding=ROUND_FLOOR)
    g = int(n_plus_g) + 1 - n
    return max(g, 1), exponents


def _bic_fits(
    data: Dataset,
    s: int | None,
    fam: Family,
    regime: Regime,
    sigma0: float,
    cfg: FitConfig,
) -> tuple[int, dict[int, FitResult]]:
    if isinstance(regime, ImproperNoise):
        raise InvalidArgumentError("BIC certificates use no noise or range noise")
    top = f_max(fam, sigma0)
    if isinstance(regime, RangeUniform) and top < 1.0 / (data.xmax - data.xmin):
        raise HypothesisViolatedError(
            f"f(0)/sigma0 = {top} is below the range noise level "
            f"{1.0 / (data.xmax - data.xmin)}"
        )
    cfg = cfg.with_sigma0(sigma0)
    if s is None:
        s = select_order(data, fam, regime, cfg, CriterionKind.BIC).s_n
    if s < 2:
        raise InvalidArgumentError("The certificate compares against r < s, need s >= 2")
    fits = order_fits(data, s, fam, regime, cfg)
    has_noise = regime.bind(data).has_noise
    values = {
        r: criterion_value(
            fits[r].loglik, free_parameters(r, has_noise), data.n, CriterionKind.BIC
        )
        for r in fits
    }
    if any(values[r] > values[s] for r in range(1, s)):
        raise HypothesisViolatedError(f"s={s} does not maximize BIC over r <= s")
    return s, fits


def bic_no_breakdown_certificate(
    data: Dataset,
    s: int | None,
    fam: Family,
    regime: Regime,
    sigma0: float,
    cfg: FitConfig,
    g_max: int | None = None,
) -> BreakdownReport:
    """
    Certify that the BIC solution with s components survives g added points.
    Range noise additionally needs f(0)/sigma0 >= 1/(xmax - xmin).
    """
    s, fits = _bic_fits(data, s, fam, regime, sigma0, cfg)
    logliks = {r: result.loglik for r, result in fits.items()}
    g_max = g_max if g_max is not None else 2 * data.n
    rows = []
    for g in range(1, g_max + 1):
        value, per_r = bic_condition(logliks, s, data.n, g)
        rows.append(ConditionRow(g=g, value=value, holds=value > 0.0, per_r=per_r))
    g_star = max((row.g for row in rows if row.holds), default=0)
    logger.info(f"BIC no-breakdown certificate: g*={g_star} for n={data.n}, s={s}")
    return _certificate(
        ReportKind.BIC_NO_BREAK_CERT,
        data.n,
        g_star,
        f_max(fam, sigma0),
        rows,
        fits,
        {"s": s, "regime": regime.kind},
    )


def bic_gross_outlier_breakdown(
    data: Dataset,
    s: int | None,
    fam: Family,
    regime: Regime,
    sigma0: float,
    cfg: FitConfig,
) -> BreakdownReport:
    """Number of gross outliers after which BIC drops below s components"""
    s, fits = _bic_fits(data, s, fam, regime, sigma0, cfg)
    logliks = {r: result.loglik for r, result in fits.items()}
    g, exponents = gross_outlier_size(logliks, s, data.n)
    logger.info(f"BIC gross outlier breakdown after g={g} points")
    bound = Fraction(g, data.n + g)
    return BreakdownReport(
        kind=ReportKind.BIC_GROSS_OUTLIER_CERT,
        n=data.n,
        g_star=g,
        bound=bound,
        minimal_breakdown=bound,
        f_max=f_max(fam, sigma0),
        fits=fits,
        breakdown=True,
        details={
            "s": s,
            "log_exponents": exponents,
            "log_n_plus_g": min(exponents.values()),
        },
    )


# --- Empirical searches --- #


def single_outlier_breaks(
    data: Dataset,
    y: float,
    s: int,
    fam: Family,
    regime: Regime,
    sigma0: float,
    cfg: FitConfig,
    original: FitResult | None = None,
) -> ThresholdProbe:
    """
    Refit s components after adding one point at y. It breaks when all original
    points share one component label and the added point has another one.
    """
    cfg = cfg.with_sigma0(sigma0)
    if original is None:
        original = fit_with_insertion(data, s, fam, regime, cfg)
    augmented = data.with_added([y])
    result = fit_with_insertion(
        augmented.data, s, fam, regime, cfg, extra_starts=[original.params]
    )
    labels = classify(result.params, augmented.data).labels
    positions = set(augmented.original_positions)
    original_labels = {labels[p] for p in positions}
    outlier = next(labels[p] for p in range(augmented.data.n) if p not in positions)
    broke = (
        len(original_labels) == 1
        and NOISE_LABEL not in original_labels
        and outlier != NOISE_LABEL
        and outlier not in original_labels
    )
    logger.info(f"Outlier at y={y:.6g}: loglik={result.loglik:.4f} broke={broke}")
    return ThresholdProbe(y=y, broke=broke, loglik=result.loglik)


def empirical_outlier_threshold(
    data: Dataset,
    s: int,
    fam: Family,
    regime: Regime,
    sigma0: float,
    cfg: FitConfig,
    ceiling: float = THRESHOLD_CEILING,
) -> ThresholdSearch:
    """
    Smallest position of one added point at which the s-component fit puts all
    original points into one cluster and the added point alone into another.
    Doubles the distance from xmax + 10 and then bisects to 1% relative width.
    """
    if s < 2:
        raise InvalidArgumentError("Outlier breakdown needs s >= 2")
    cfg = cfg.with_sigma0(sigma0)
    original = fit_with_insertion(data, s, fam, regime, cfg)
    probes: list[ThresholdProbe] = []

    def probe(y: float) -> bool:
        result = single_outlier_breaks(data, y, s, fam, regime, sigma0, cfg, original)
        probes.append(result)
        return result.broke

    low, step = data.xmax, THRESHOLD_START_OFFSET
    high = data.xmax + step
    while not probe(high):
        low = high
        step *= 2.0
        high = data.xmax + step
        if high > ceiling:
            logger.info(f"No outlier breakdown below {ceiling:g}")
            return ThresholdSearch(threshold=None, found=False, probes=tuple(probes))

    while high - low > THRESHOLD_REL_TOL * abs(high):
        middle = 0.5 * (low + high)
        if probe(middle):
            high = middle
        else:
            low = middle
    logger.info(f"Outlier breakdown threshold y={high:.6g}")
    return ThresholdSearch(threshold=high, found=True, probes=tuple(probes))


def _in_box(original: MixtureParams, j: int, refit: MixtureParams, k: int) -> bool:
    reference = original.components[j]
    candidate = refit.components[k]
    return (
        abs(candidate.a - reference.a) <= LOCATION_BOX * reference.sigma
        and reference.sigma / SCALE_BOX <= candidate.sigma <= SCALE_BOX * reference.sigma
        and candidate.pi >= reference.pi / PROPORTION_BOX
        and candidate.pi > 0.0
    )


def match_components(
    original: MixtureParams, refit: MixtureParams
) -> list[ComponentMatch] | None:
    """
    Injective assignment of every original component to a refit component
    inside its box, minimizing the summed standardized location distance.
    None when no such assignment exists.
    """
    if refit.s < original.s:
        return None
    allowed = [
        [_in_box(original, j, refit, k) for k in range(refit.s)]
        for j in range(original.s)
    ]
    best: tuple[float, tuple[int, ...]] | None = None
    for assignment in permutations(range(refit.s), original.s):
        if not all(allowed[j][k] for j, k in enumerate(assignment)):
            continue
        cost = sum(
            abs(refit.components[k].a - original.components[j].a)
            / original.components[j].sigma
            for j, k in enumerate(assignment)
        )
        if best is None or cost < best[0]:
            best = (cost, assignment)
    if best is None:
        return None
    return [
        ComponentMatch(
            original=j,
            refit=k,
            distance=abs(refit.components[k].a - original.components[j].a),
        )
        for j, k in enumerate(best[1])
    ]


def empirical_contamination_probe(
    data: Dataset,
    added: Sequence[float],
    fam: Family,
    regime: Regime,
    sigma0: float,
    cfg: FitConfig,
    mode: FixedOrder | EstimatedOrder,
) -> BreakdownReport:
    """
    Refit after adding points and report parameter breakdown (the order drops or
    the original components cannot all be matched inside their boxes) together
    with the classification verdict of every original cluster.
    """
    if not added:
        raise InvalidArgumentError("Nothing to add")
    cfg = cfg.with_sigma0(sigma0)
    augmented = data.with_added(added)

    if isinstance(mode, FixedOrder):
        original = fit_with_insertion(data, mode.s, fam, regime, cfg)
        refit = fit_with_insertion(
            augmented.data, mode.s, fam, regime, cfg, extra_starts=[original.params]
        )
    else:
        selection = select_order(data, fam, regime, cfg, mode.criterion, mode.s_max)
        original = selection.selected
        refit = select_order(
            augmented.data,
            fam,
            regime,
            cfg,
            mode.criterion,
            mode.s_max,
            extra_starts=[original.params],
        ).selected

    matches = match_components(original.params, refit.params)
    parameter_breakdown = matches is None
    verdict = classification_breakdown_check(
        classify(original.params, data),
        induced_partition(refit, augmented.data, augmented.original_positions),
    )
    g = len(added)
    inside = all(data.xmin <= y <= data.xmax for y in added)
    logger.info(
        f"Added {g} points: s {original.params.s} -> {refit.params.s}, "
        f"parameter breakdown={parameter_breakdown}, "
        f"broken clusters={verdict.broken_count}"
    )
    bound = Fraction(g, data.n + g)
    return BreakdownReport(
        kind=ReportKind.EMPIRICAL_INLIER if inside else ReportKind.EMPIRICAL_OUTLIER,
        n=data.n,
        g_star=g,
        bound=bound,
        minimal_breakdown=bound,
        f_max=f_max(fam, sigma0),
        fits={original.params.s: original},
        refit=refit,
        verdict=verdict,
        breakdown=parameter_breakdown,
        details={
            "mode": mode.model_dump(mode="json"),
            "added": list(added),
            "s_original": original.params.s,
            "s_refit": refit.params.s,
            "matches": [m.model_dump() for m in matches or []],
            "classification_breakdown": verdict.broken_count > 0,
        },
    )


# --- Separation and divergence --- #


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """All (q_1..q_parts) with q_k >= 1 summing to total"""
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first, *rest)


def separation_decomposition_check(
    groups: Sequence[Dataset],
    gap: float,
    s: int,
    fam: Family,
    sigma0: float,
    cfg: FitConfig,
) -> DecompositionCheck:
    """
    Compare the s-component log-likelihood of the groups shifted apart by k * gap
    with the best split of the s components over the separate groups.
    """
    if not groups:
        raise InvalidArgumentError("Need at least one group")
    if s < len(groups):
        raise InvalidArgumentError(f"{len(groups)} groups need s >= {len(groups)}")
    cfg = cfg.with_sigma0(sigma0)
    regime = NoNoise()
    shifted = [group.shifted(k * gap) for k, group in enumerate(groups)]
    union = shifted[0]
    for group in shifted[1:]:
        union = union.union(group)
    n = union.n

    union_loglik = fit_with_insertion(union, s, fam, regime, cfg).loglik
    upper = s - len(groups) + 1
    group_logliks = []
    for group in groups:
        fits = order_fits(group, min(upper, group.distinct), fam, regime, cfg)
        weight = group.n * math.log(group.n / n)
        group_logliks.append({q: result.loglik + weight for q, result in fits.items()})

    best_split: tuple[int, ...] = ()
    split_loglik = -math.inf
    for split in _compositions(s, len(groups)):
        if any(q not in logliks for q, logliks in zip(split, group_logliks, strict=True)):
            continue
        value = math.fsum(
            logliks[q] for q, logliks in zip(split, group_logliks, strict=True)
        )
        if value > split_loglik:
            split_loglik, best_split = value, split
    if not best_split:
        raise InvalidArgumentError("No split of s components fits the groups")

    deviation = abs(union_loglik - split_loglik)
    logger.info(f"Separation at gap={gap:g}: deviation={deviation:.3e} split={best_split}")
    return DecompositionCheck(
        deviation=deviation,
        union_loglik=union_loglik,
        split_loglik=split_loglik,
        best_split=best_split,
    )


def diverging_outlier_demo(
    data: Dataset,
    s: int,
    r: int,
    y: float,
    fam: Family,
    regime: Regime,
    sigma0: float,
    cfg: FitConfig,
) -> DivergenceDemo:
    """
    Fit s components after adding r outliers at y, y**2, ..., y**r. The r
    components taken by the outliers move away with y while the others stay
    within the original data range.
    """
    if not 1 <= r < s:
        raise InvalidArgumentError(f"Need 1 <= r < s, got r={r}, s={s}")
    if not y > 1.0:
        raise InvalidArgumentError(f"Outlier base must exceed 1, got {y}")
    cfg = cfg.with_sigma0(sigma0)
    outliers = tuple(float(y ** (i + 1)) for i in range(r))
    augmented = data.with_added(outliers)

    base = fit_with_insertion(data, s - r, fam, regime, cfg).params
    start = MixtureParams.from_arrays(
        np.append(base.pis * (s - r) / s, np.full(r, 1.0 / s)),
        np.append(base.locations, outliers),
        np.append(base.scales, np.full(r, cfg.sigma0)),
        sigma0=cfg.sigma0,
        family=fam.spec,
        pi0=base.pi0 * (s - r) / s,
        regime=regime.bind(augmented.data),
    )
    result = fit(augmented.data, s, fam, regime, cfg, extra_starts=[start])

    responsibilities = e_step(result.params, augmented.data).components
    original = set(augmented.original_positions)
    outlier_locations, other_locations = [], []
    for j, component in enumerate(result.params.components):
        top = int(np.argmax(responsibilities[:, j]))
        if top in original:
            other_locations.append(component.a)
        else:
            outlier_locations.append(component.a)
    return DivergenceDemo(
        y=y,
        outliers=outliers,
        params=result.params,
        outlier_locations=tuple(outlier_locations),
        other_locations=tuple(other_locations),
    )
