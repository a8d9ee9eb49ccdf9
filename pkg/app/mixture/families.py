import logging
import math
from abc import ABC, abstractmethod
from enum import Enum
from functools import lru_cache

import numpy as np
import numpy.typing as npt
from scipy import special, stats

from app.core.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class FamilyName(str, Enum):
    NORMAL = "normal"
    STUDENT_T = "t"
    HUBER = "huber"


class Family(ABC):
    """
    Symmetric, unimodal, everywhere positive base density f generating the
    location-scale family (1/sigma) f((x - a)/sigma).
    """

    @property
    @abstractmethod
    def name(self) -> FamilyName:
        """Returns the family tag"""
        pass

    @property
    @abstractmethod
    def spec(self) -> str:
        """Returns the flag form of the family, e.g. ``t:3``"""
        pass

    @abstractmethod
    def log_base(self, z: FloatArray) -> FloatArray:
        """Returns log f(z) for standardized values"""
        pass

    @abstractmethod
    def cdf(self, z: FloatArray) -> FloatArray:
        """Returns the base distribution function"""
        pass

    @abstractmethod
    def quantile(self, p: float) -> float:
        """Returns the base quantile function at p in (0, 1)"""
        pass

    @abstractmethod
    def mm_weights(self, z: FloatArray) -> FloatArray:
        """
        Returns psi(z)/z where psi = -(log f)'. Because -log f is concave in z**2
        for every family here, these weights give the quadratic majorizer used by
        the re-weighting fixed point of the weighted ML step.
        """
        pass

    @property
    def closed_form_ml(self) -> bool:
        """Whether weighted ML has a closed form (weighted mean and variance)"""
        return False

    def base(self, z: FloatArray) -> FloatArray:
        return np.exp(self.log_base(z))

    @property
    def f0(self) -> float:
        """Returns f(0), the mode height of the base density"""
        return float(self.base(np.zeros(1))[0])

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Family) and self.spec == other.spec

    def __hash__(self) -> int:
        return hash(self.spec)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec!r})"


class Normal(Family):
    """Standard Normal base density"""

    name = FamilyName.NORMAL
    spec = "normal"

    def log_base(self, z: FloatArray) -> FloatArray:
        z = np.asarray(z, dtype=np.float64)
        return -0.5 * z * z - LOG_SQRT_2PI

    def cdf(self, z: FloatArray) -> FloatArray:
        return special.ndtr(np.asarray(z, dtype=np.float64))

    def quantile(self, p: float) -> float:
        return float(special.ndtri(p))

    def mm_weights(self, z: FloatArray) -> FloatArray:
        return np.ones_like(np.asarray(z, dtype=np.float64))

    @property
    def closed_form_ml(self) -> bool:
        return True


class StudentT(Family):
    """Student-t base density with nu >= 1 degrees of freedom (nu = 1 is Cauchy)"""

    name = FamilyName.STUDENT_T

    def __init__(self, nu: float = 3.0):
        if not nu >= 1.0:
            raise InvalidArgumentError(f"Degrees of freedom must be >= 1, got {nu}")
        self.nu = float(nu)
        self._log_norm = (
            special.gammaln((self.nu + 1.0) / 2.0)
            - special.gammaln(self.nu / 2.0)
            - 0.5 * math.log(self.nu * math.pi)
        )

    @property
    def spec(self) -> str:
        return f"t:{self.nu!r}"

    def log_base(self, z: FloatArray) -> FloatArray:
        z = np.asarray(z, dtype=np.float64)
        return self._log_norm - 0.5 * (self.nu + 1.0) * np.log1p(z * z / self.nu)

    def cdf(self, z: FloatArray) -> FloatArray:
        return np.asarray(stats.t.cdf(z, df=self.nu), dtype=np.float64)

    def quantile(self, p: float) -> float:
        return float(stats.t.ppf(p, df=self.nu))

    def mm_weights(self, z: FloatArray) -> FloatArray:
        z = np.asarray(z, dtype=np.float64)
        return (self.nu + 1.0) / (self.nu + z * z)


class HuberLF(Family):
    """
    Huber's least favorable density C_k exp(-rho_k(z)): Normal in [-k, k]
    with exponential tails.
    """

    name = FamilyName.HUBER

    def __init__(self, k: float = 1.345):
        if not k > 0.0:
            raise InvalidArgumentError(f"Bending constant must be > 0, got {k}")
        self.k = float(k)
        central = math.sqrt(2.0 * math.pi) * (2.0 * float(special.ndtr(self.k)) - 1.0)
        tails = 2.0 * math.exp(-0.5 * self.k * self.k) / self.k
        self.norm = 1.0 / (central + tails)
        self._log_norm = math.log(self.norm)
        # Probability mass below -k
        self._tail_mass = self.norm * math.exp(-0.5 * self.k * self.k) / self.k

    @property
    def spec(self) -> str:
        return f"huber:{self.k!r}"

    def rho(self, z: FloatArray) -> FloatArray:
        absz = np.abs(np.asarray(z, dtype=np.float64))
        return np.where(
            absz <= self.k, 0.5 * absz * absz, self.k * absz - 0.5 * self.k * self.k
        )

    def log_base(self, z: FloatArray) -> FloatArray:
        return self._log_norm - self.rho(z)

    def _lower_cdf(self, z: FloatArray) -> FloatArray:
        """Distribution function for z <= 0"""
        lower_tail = self.norm * np.exp(self.k * z + 0.5 * self.k * self.k) / self.k
        central = self._tail_mass + self.norm * math.sqrt(2.0 * math.pi) * (
            special.ndtr(z) - special.ndtr(-self.k)
        )
        return np.where(z <= -self.k, lower_tail, central)

    def cdf(self, z: FloatArray) -> FloatArray:
        z = np.asarray(z, dtype=np.float64)
        negative = np.minimum(z, 0.0)
        mirrored = np.minimum(-z, 0.0)
        return np.where(z <= 0.0, self._lower_cdf(negative), 1.0 - self._lower_cdf(mirrored))

    def quantile(self, p: float) -> float:
        if not 0.0 < p < 1.0:
            raise InvalidArgumentError(f"Probability must lie in (0, 1), got {p}")
        if p > 0.5:
            return -self.quantile(1.0 - p)
        if p <= self._tail_mass:
            return (math.log(p * self.k / self.norm) - 0.5 * self.k * self.k) / self.k
        inner = float(special.ndtr(-self.k)) + (p - self._tail_mass) / (
            self.norm * math.sqrt(2.0 * math.pi)
        )
        return float(special.ndtri(inner))

    def mm_weights(self, z: FloatArray) -> FloatArray:
        absz = np.abs(np.asarray(z, dtype=np.float64))
        return np.where(absz <= self.k, 1.0, self.k / np.maximum(absz, self.k))


FAMILY_CLASS_MAP: dict[FamilyName, type[Family]] = {
    FamilyName.NORMAL: Normal,
    FamilyName.STUDENT_T: StudentT,
    FamilyName.HUBER: HuberLF,
}


@lru_cache(maxsize=64)
def family_from_spec(spec: str) -> Family:
    """
    Parse ``normal``, ``t:<nu>`` or ``huber:<k>`` (``t`` and ``huber`` alone use
    their defaults).
    """
    name, _, parameter = spec.strip().lower().partition(":")
    try:
        family_name = FamilyName(name)
    except ValueError:
        raise InvalidArgumentError(f"Unknown family {spec!r}")
    family_class = FAMILY_CLASS_MAP[family_name]
    if family_name is FamilyName.NORMAL:
        if parameter:
            raise InvalidArgumentError("The normal family takes no parameter")
        return family_class()
    if not parameter:
        return family_class()
    try:
        value = float(parameter)
    except ValueError:
        raise InvalidArgumentError(f"Invalid family parameter in {spec!r}")
    return family_class(value)
