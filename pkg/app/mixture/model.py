import logging
import math

import numpy as np
from scipy import special

from app.core.errors import InternalError, InvalidArgumentError
from app.mixture.families import Family, FloatArray
from app.schemas import Dataset, MixtureParams, RangeUniform

logger = logging.getLogger(__name__)


def density(fam: Family, x: float | FloatArray, a: float, sigma: float) -> FloatArray:
    """Location-scale density (1/sigma) f((x - a)/sigma)"""
    if not sigma > 0.0:
        raise InvalidArgumentError(f"Scale must be positive, got {sigma}")
    z = (np.asarray(x, dtype=np.float64) - a) / sigma
    return fam.base(z) / sigma


def log_density(
    fam: Family, x: float | FloatArray, a: float | FloatArray, sigma: float | FloatArray
) -> FloatArray:
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0.0):
        raise InvalidArgumentError("Scale must be positive")
    z = (np.asarray(x, dtype=np.float64) - a) / sigma
    return fam.log_base(z) - np.log(sigma)


def log_joint(params: MixtureParams, x: FloatArray) -> FloatArray:
    """
    Matrix of log(pi_j f_j(x_i)), shape (n, s) without noise and (n, s + 1)
    with noise, the noise term in column 0.
    """
    x = np.asarray(x, dtype=np.float64)[:, np.newaxis]
    fam = params.fam
    with np.errstate(divide="ignore"):
        terms = np.log(params.pis) + log_density(
            fam, x, params.locations, params.scales
        )
        if params.regime.has_noise:
            noise = np.log(params.pi0 * params.regime.density(x[:, 0]))
            terms = np.column_stack([noise, terms])
    return np.asarray(terms, dtype=np.float64)


def log_mixture_density(params: MixtureParams, x: FloatArray) -> FloatArray:
    return np.asarray(special.logsumexp(log_joint(params, x), axis=1), dtype=np.float64)


def mixture_density(params: MixtureParams, x: float | FloatArray) -> FloatArray:
    """Mixture density including the regime's noise term"""
    values = np.atleast_1d(np.asarray(x, dtype=np.float64))
    result = np.exp(log_mixture_density(params, values))
    return result if np.ndim(x) else result[0]


def check_regime(params: MixtureParams, data: Dataset) -> None:
    """Range noise is defined by the extremes of the dataset it is evaluated on"""
    regime = params.regime
    if isinstance(regime, RangeUniform) and (
        regime.xmin != data.xmin or regime.xmax != data.xmax
    ):
        raise InvalidArgumentError(
            f"Range noise on [{regime.xmin}, {regime.xmax}] does not match the data "
            f"range [{data.xmin}, {data.xmax}]"
        )


def pointwise_loglik(params: MixtureParams, data: Dataset) -> FloatArray:
    check_regime(params, data)
    values = log_mixture_density(params, data.array)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise InternalError(f"Zero mixture density at x={data.values[bad]}")
    return values


def log_likelihood(params: MixtureParams, data: Dataset) -> float:
    """Sum of log mixture densities, accumulated with compensated summation"""
    return math.fsum(pointwise_loglik(params, data).tolist())
