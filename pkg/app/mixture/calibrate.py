import logging
import math

import numpy as np
from scipy import special

from app.core.errors import CalibrationFailedError, InvalidArgumentError
from app.mixture.em import fit_with_insertion
from app.mixture.families import Family
from app.mixture.selection import criterion_value, free_parameters
from app.schemas import (
    CalibrationResult,
    CalibrationTrace,
    CriterionKind,
    Dataset,
    FitConfig,
    NoNoise,
)

logger = logging.getLogger(__name__)

C0_BRACKET = (1e-6, 1.0)
C0_REL_TOL = 1e-3
# Improper noise level is the density at this quantile of the widest component
NOISE_QUANTILE = 0.025


def nsd(a: float, var: float, n: int) -> Dataset:
    """Normal quantiles a + sd * Phi^-1(i/(n+1)), i = 1..n"""
    if n < 1:
        raise InvalidArgumentError(f"Need n >= 1, got {n}")
    if not var > 0.0:
        raise InvalidArgumentError(f"Variance must be positive, got {var}")
    probabilities = np.arange(1, n + 1) / (n + 1)
    values = a + math.sqrt(var) * special.ndtri(probabilities)
    return Dataset(values=tuple(float(v) for v in values))


def alpha_outlier_position(n: int, p: float) -> tuple[float, float]:
    """
    alpha_n = 1 - (1 - p)^(1/n), and the upper edge Phi^-1(1 - alpha_n/2) of the
    alpha_n-outlier region of the standard Normal.
    """
    if n < 1:
        raise InvalidArgumentError(f"Need n >= 1, got {n}")
    if not 0.0 < p < 1.0:
        raise InvalidArgumentError(f"Probability must lie in (0, 1), got {p}")
    alpha = -math.expm1(math.log1p(-p) / n)
    return alpha, -float(special.ndtri(alpha / 2.0))


def benchmark(n: int, p: float) -> tuple[Dataset, float, float]:
    """
    (0,1)-NSD of n - 1 points plus one point at the edge of the outlier region
    that a clean sample of size n reaches with probability 1 - p. Returns the
    dataset, the two-sided tail probability of that point and its position.
    """
    outlier_alpha, y = alpha_outlier_position(n, 1.0 - p)
    return nsd(0.0, 1.0, n - 1).union(Dataset(values=(y,))), outlier_alpha, y


class _BicGap:
    """C(2) - C(1) on a fixed dataset as a function of the scale floor"""

    def __init__(self, data: Dataset, fam: Family, cfg: FitConfig):
        self.data = data
        self.fam = fam
        self.cfg = cfg
        self._one: float | None = None

    def criterion(self, s: int, c0: float) -> float:
        result = fit_with_insertion(
            self.data, s, self.fam, NoNoise(), self.cfg.with_sigma0(c0)
        )
        return criterion_value(
            result.loglik, free_parameters(s, False), self.data.n, CriterionKind.BIC
        )

    def __call__(self, c0: float) -> float:
        # The floor does not bind for one component on unit-scale data
        if self._one is None:
            self._one = self.criterion(1, c0)
        return self.criterion(2, c0) - self._one


def calibrate_c0(n: int, p: float, fam: Family, cfg: FitConfig) -> CalibrationTrace:
    """
    Bisect log c0 until BIC is indifferent between one and two components on the
    benchmark dataset. Two components win for small c0 because the second one
    can fit the outlier with a tiny scale.
    """
    if n < 3:
        raise InvalidArgumentError(f"Calibration needs n >= 3, got {n}")
    alpha_n, _ = alpha_outlier_position(n, p)
    data, outlier_alpha, y = benchmark(n, p)
    gap = _BicGap(data, fam, cfg)
    low, high = C0_BRACKET
    low_value, high_value = gap(low), gap(high)
    steps = [(low, low_value), (high, high_value)]
    if not (low_value > 0.0 > high_value):
        raise CalibrationFailedError(
            f"No sign change of C(2) - C(1) on [{low}, {high}]: "
            f"{low_value:.4f}, {high_value:.4f}"
        )

    while high / low - 1.0 > C0_REL_TOL:
        middle = math.sqrt(low * high)
        value = gap(middle)
        steps.append((middle, value))
        logger.debug(f"Calibration c0={middle:.6g}: C(2) - C(1) = {value:.6f}")
        if value > 0.0:
            low = middle
        else:
            high = middle
    c0 = math.sqrt(low * high)
    residual = gap(c0)
    logger.info(f"Calibrated c0={c0:.6g} (outlier at {y:.4f}, residual {residual:.4g})")
    return CalibrationTrace(
        c0=c0,
        outlier=y,
        alpha_n=alpha_n,
        outlier_alpha=outlier_alpha,
        residual=residual,
        steps=tuple(steps),
    )


def derive_tuning(sigma_max: float, c0: float, fam: Family) -> CalibrationResult:
    """sigma0 = c0 * sigma_max and b = density of f_(0, sigma_max) at its 0.025-quantile"""
    if not sigma_max > 0.0:
        raise InvalidArgumentError(f"sigma_max must be positive, got {sigma_max}")
    if not c0 > 0.0:
        raise InvalidArgumentError(f"c0 must be positive, got {c0}")
    sigma0 = c0 * sigma_max
    z = fam.quantile(NOISE_QUANTILE)
    b = float(fam.base(np.array([z]))[0]) / sigma_max
    if not b < fam.f0 / sigma0:
        logger.warning(f"Noise level b={b:.6g} is not below f(0)/sigma0")
    return CalibrationResult(
        c0=c0, sigma0=sigma0, b=b, sigma_max=sigma_max, family=fam.spec
    )


def tuning_from_trace(
    trace: CalibrationTrace, n: int, p: float, sigma_max: float, fam: Family
) -> CalibrationResult:
    """Tuning for a calibrated c0, carrying the benchmark settings"""
    tuning = derive_tuning(sigma_max, trace.c0, fam)
    return CalibrationResult.model_validate(
        tuning.model_dump() | {"alpha_n": trace.alpha_n, "p": p, "n": n}
    )


def calibrate(
    n: int, p: float, sigma_max: float, fam: Family, cfg: FitConfig
) -> CalibrationResult:
    trace = calibrate_c0(n, p, fam, cfg)
    return tuning_from_trace(trace, n, p, sigma_max, fam)
