import math
from collections.abc import Iterable, Sequence
from enum import Enum
from fractions import Fraction
from functools import cached_property
from typing import Annotated, Any, Literal, Self

import numpy as np
import numpy.typing as npt
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PlainSerializer,
    PositiveFloat,
    PositiveInt,
    model_validator,
)

from app.core.config import settings
from app.mixture.families import Family, family_from_spec

FloatArray = npt.NDArray[np.float64]

# Exact rationals travel as "p/q" strings in reports
Rational = Annotated[Fraction, PlainSerializer(lambda f: str(f), return_type=str)]

PROPORTION_TOL = 1e-12


# --- Data --- #


class Dataset(BaseModel):
    """Ordered sample x_1 <= ... <= x_n"""

    model_config = ConfigDict(frozen=True)

    values: tuple[float, ...] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_sorted(self) -> Self:
        if any(b < a for a, b in zip(self.values, self.values[1:], strict=False)):
            raise ValueError("Dataset values must be nondecreasing")
        if not all(np.isfinite(self.values)):
            raise ValueError("Dataset values must be finite")
        return self

    @classmethod
    def from_values(cls, values: Iterable[float]) -> "Dataset":
        return cls(values=tuple(sorted(float(v) for v in values)))

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def xmin(self) -> float:
        return self.values[0]

    @property
    def xmax(self) -> float:
        return self.values[-1]

    @cached_property
    def distinct(self) -> int:
        return len(set(self.values))

    @cached_property
    def array(self) -> FloatArray:
        array = np.asarray(self.values, dtype=np.float64)
        array.flags.writeable = False
        return array

    def shifted(self, offset: float) -> "Dataset":
        return Dataset(values=tuple(v + offset for v in self.values))

    def union(self, other: "Dataset") -> "Dataset":
        return Dataset.from_values(self.values + other.values)

    def with_added(self, added: Sequence[float]) -> "ContaminatedDataset":
        """
        Append points and re-sort. Ties keep original points ahead of added ones,
        so original positions are recoverable.
        """
        combined = np.concatenate([self.array, np.asarray(added, dtype=np.float64)])
        order = np.argsort(combined, kind="stable")
        positions = np.empty_like(order)
        positions[order] = np.arange(order.size)
        return ContaminatedDataset(
            data=Dataset(values=tuple(float(v) for v in combined[order])),
            original_positions=tuple(int(p) for p in positions[: self.n]),
            added=tuple(float(v) for v in added),
        )


class ContaminatedDataset(BaseModel):
    model_config = ConfigDict(frozen=True)

    data: Dataset
    # original_positions[i] is the index of the i-th original point in `data`
    original_positions: tuple[int, ...]
    added: tuple[float, ...]

    @property
    def original_count(self) -> int:
        return len(self.original_positions)


# --- Noise regimes --- #


class NoNoise(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["none"] = "none"

    @property
    def has_noise(self) -> bool:
        return False

    def density(self, x: FloatArray) -> FloatArray:
        return np.zeros_like(np.asarray(x, dtype=np.float64))

    def bind(self, data: Dataset) -> "NoNoise":  # noqa: ARG002
        return self


class RangeUniform(BaseModel):
    """Uniform noise on the data range [xmin, xmax]"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["range"] = "range"
    xmin: float
    xmax: float

    @model_validator(mode="after")
    def _check_range(self) -> Self:
        if not self.xmax > self.xmin:
            raise ValueError("Range noise needs xmax > xmin")
        return self

    @classmethod
    def from_dataset(cls, data: Dataset) -> "RangeUniform":
        return cls(xmin=data.xmin, xmax=data.xmax)

    @property
    def has_noise(self) -> bool:
        return True

    @property
    def level(self) -> float:
        return 1.0 / (self.xmax - self.xmin)

    def density(self, x: FloatArray) -> FloatArray:
        x = np.asarray(x, dtype=np.float64)
        inside = (x >= self.xmin) & (x <= self.xmax)
        return np.where(inside, self.level, 0.0)

    def bind(self, data: Dataset) -> "RangeUniform":
        return RangeUniform.from_dataset(data)


class ImproperNoise(BaseModel):
    """Improper noise with a fixed density level b everywhere"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["improper"] = "improper"
    b: PositiveFloat

    @property
    def has_noise(self) -> bool:
        return True

    def density(self, x: FloatArray) -> FloatArray:
        return np.full_like(np.asarray(x, dtype=np.float64), self.b)

    def bind(self, data: Dataset) -> "ImproperNoise":  # noqa: ARG002
        return self


NoiseRegime = Annotated[
    NoNoise | RangeUniform | ImproperNoise, Field(discriminator="kind")
]


# --- Mixture parameters --- #


class Component(BaseModel):
    model_config = ConfigDict(frozen=True)

    pi: float = Field(ge=0.0, le=1.0 + PROPORTION_TOL)
    a: float
    sigma: PositiveFloat


class MixtureParams(BaseModel):
    """Proportions, locations and scales of s components plus the noise weight"""

    model_config = ConfigDict(frozen=True)

    components: tuple[Component, ...] = Field(min_length=1)
    pi0: NonNegativeFloat = 0.0
    regime: NoiseRegime = NoNoise()
    # Scale floor under which the parameters were produced
    sigma0: PositiveFloat
    family: str = "normal"

    @model_validator(mode="after")
    def _check_parameters(self) -> Self:
        total = self.pi0 + sum(c.pi for c in self.components)
        if abs(total - 1.0) > PROPORTION_TOL * max(1, self.s):
            raise ValueError(f"Proportions must sum to 1, got {total!r}")
        if not self.regime.has_noise and self.pi0 != 0.0:
            raise ValueError("Noise proportion must be 0 without a noise regime")
        family_from_spec(self.family)
        floor = self.sigma0 * (1.0 - 1e-12)
        if any(c.sigma < floor for c in self.components):
            raise ValueError(f"Component scale below the floor {self.sigma0}")
        return self

    @property
    def s(self) -> int:
        return len(self.components)

    @property
    def fam(self) -> Family:
        return family_from_spec(self.family)

    @property
    def pis(self) -> FloatArray:
        return np.array([c.pi for c in self.components], dtype=np.float64)

    @property
    def locations(self) -> FloatArray:
        return np.array([c.a for c in self.components], dtype=np.float64)

    @property
    def scales(self) -> FloatArray:
        return np.array([c.sigma for c in self.components], dtype=np.float64)

    @classmethod
    def from_arrays(
        cls,
        pis: Sequence[float],
        locations: Sequence[float],
        scales: Sequence[float],
        *,
        sigma0: float,
        family: str = "normal",
        pi0: float = 0.0,
        regime: NoNoise | RangeUniform | ImproperNoise = NoNoise(),
    ) -> "MixtureParams":
        components = tuple(
            Component(pi=float(p), a=float(a), sigma=float(s))
            for p, a, s in zip(pis, locations, scales, strict=True)
        )
        return cls(
            components=components,
            pi0=float(pi0),
            regime=regime,
            sigma0=sigma0,
            family=family,
        )

    def canonical(self) -> "MixtureParams":
        """Sort components by location, then scale, then proportion"""
        ordered = tuple(sorted(self.components, key=lambda c: (c.a, c.sigma, c.pi)))
        return self.model_copy(update={"components": ordered})


# --- Fitting --- #


class FitConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma0: PositiveFloat = Field(default_factory=lambda: settings.SIGMA0)
    restarts: PositiveInt = Field(default_factory=lambda: settings.RESTARTS)
    max_iters: PositiveInt = Field(default_factory=lambda: settings.MAX_ITERS)
    rel_tol: PositiveFloat = Field(default_factory=lambda: settings.REL_TOL)
    seed: int = Field(default_factory=lambda: settings.SEED)
    inner_iters: PositiveInt = Field(default_factory=lambda: settings.INNER_ITERS)
    inner_tol: PositiveFloat = Field(default_factory=lambda: settings.INNER_TOL)
    screen_iters: PositiveInt = Field(default_factory=lambda: settings.SCREEN_ITERS)
    screen_keep: PositiveInt = Field(default_factory=lambda: settings.SCREEN_KEEP)
    threads: PositiveInt = Field(default_factory=lambda: settings.THREADS)

    def with_sigma0(self, sigma0: float) -> "FitConfig":
        return self.model_copy(update={"sigma0": sigma0})


class FitResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    params: MixtureParams
    loglik: float
    iterations: int
    converged: bool
    restart_index: int
    # Log-likelihood after every EM iteration of the winning run
    trace: tuple[float, ...] = ()


class CriterionKind(str, Enum):
    AIC = "aic"
    BIC = "bic"


class OrderFit(BaseModel):
    model_config = ConfigDict(frozen=True)

    s: int
    loglik: float
    k: int
    criterion_value: float
    fit: FitResult


class SelectionResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    s_n: int
    criterion: CriterionKind
    per_s: tuple[OrderFit, ...]
    # The s_max cap was tighter than the distinct-point bound
    capped: bool = False
    all_converged: bool = True

    def fit_for(self, s: int) -> FitResult:
        for entry in self.per_s:
            if entry.s == s:
                return entry.fit
        raise KeyError(s)

    @property
    def selected(self) -> FitResult:
        return self.fit_for(self.s_n)


# --- Classification --- #

NOISE_LABEL = 0


class Partition(BaseModel):
    """Cluster labels per point; label 0 marks noise, components are 1..s"""

    model_config = ConfigDict(frozen=True)

    labels: tuple[int, ...]

    @cached_property
    def clusters(self) -> dict[int, frozenset[int]]:
        grouped: dict[int, set[int]] = {}
        for index, label in enumerate(self.labels):
            grouped.setdefault(label, set()).add(index)
        return {label: frozenset(members) for label, members in sorted(grouped.items())}

    @cached_property
    def component_clusters(self) -> dict[int, frozenset[int]]:
        return {k: v for k, v in self.clusters.items() if k != NOISE_LABEL}

    @property
    def noise(self) -> frozenset[int]:
        return self.clusters.get(NOISE_LABEL, frozenset())


class ClusterVerdict(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    label: int
    size: int
    gamma_star: Rational
    best_match: int | None
    broke: bool


class BreakdownVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    clusters: tuple[ClusterVerdict, ...]

    @property
    def broken_count(self) -> int:
        return sum(1 for c in self.clusters if c.broke)


# --- Breakdown analysis --- #


class ReportKind(str, Enum):
    IMPROPER_NOISE_CERT = "improper_noise_cert"
    BIC_NO_BREAK_CERT = "bic_no_break_cert"
    BIC_GROSS_OUTLIER_CERT = "bic_gross_outlier_cert"
    EMPIRICAL_OUTLIER = "empirical_outlier"
    EMPIRICAL_INLIER = "empirical_inlier"
    CLASSIFICATION_EMPIRICAL = "classification_empirical"


class FixedOrder(BaseModel):
    """Refit contaminated data with the same number of components"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["fixed"] = "fixed"
    s: PositiveInt


class EstimatedOrder(BaseModel):
    """Select the number of components by an information criterion"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["estimated"] = "estimated"
    criterion: CriterionKind = CriterionKind.BIC
    s_max: PositiveInt | None = None


OrderMode = Annotated[FixedOrder | EstimatedOrder, Field(discriminator="kind")]


class ComponentMatch(BaseModel):
    """Refit component paired with an original one inside its box"""

    model_config = ConfigDict(frozen=True)

    original: int
    refit: int
    distance: float


class ConditionRow(BaseModel):
    """Certificate condition evaluated at one contamination size g"""

    model_config = ConfigDict(frozen=True)

    g: int
    value: float
    holds: bool
    # Per competing order r: the bracketed term of the condition
    per_r: dict[int, float] = {}


class BreakdownReport(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: ReportKind
    n: int
    g_star: int
    bound: Rational
    # Smallest breakdown value compatible with the result, (g*+1)/(n+g*+1)
    minimal_breakdown: Rational
    f_max: float
    rows: tuple[ConditionRow, ...] = ()
    fits: dict[int, FitResult] = {}
    # Fit on the contaminated data and the induced classification verdict
    refit: FitResult | None = None
    verdict: BreakdownVerdict | None = None
    breakdown: bool | None = None
    details: dict[str, Any] = {}

    @classmethod
    def rational_bounds(cls, g_star: int, n: int) -> tuple[Fraction, Fraction]:
        return Fraction(g_star, n + g_star), Fraction(g_star + 1, n + g_star + 1)


class ThresholdProbe(BaseModel):
    model_config = ConfigDict(frozen=True)

    y: float
    broke: bool
    loglik: float


class ThresholdSearch(BaseModel):
    model_config = ConfigDict(frozen=True)

    threshold: float | None
    found: bool
    probes: tuple[ThresholdProbe, ...]


class DecompositionCheck(BaseModel):
    model_config = ConfigDict(frozen=True)

    deviation: float
    union_loglik: float
    split_loglik: float
    best_split: tuple[int, ...]


class DivergenceDemo(BaseModel):
    model_config = ConfigDict(frozen=True)

    y: float
    outliers: tuple[float, ...]
    params: MixtureParams
    # Locations of components whose largest responsibility lies on an added point
    outlier_locations: tuple[float, ...]
    other_locations: tuple[float, ...]


# --- Calibration --- #


class CalibrationResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    c0: PositiveFloat
    sigma0: PositiveFloat
    b: PositiveFloat
    alpha_n: float | None = None
    p: float | None = None
    sigma_max: PositiveFloat
    n: int | None = None
    family: str

    @model_validator(mode="after")
    def _check_invariants(self) -> Self:
        if abs(self.sigma0 - self.c0 * self.sigma_max) > 1e-15 * self.sigma0:
            raise ValueError("sigma0 must equal c0 * sigma_max")
        if self.alpha_n is not None and self.p is not None and self.n is not None:
            expected = -math.expm1(math.log1p(-self.p) / self.n)
            if not math.isclose(self.alpha_n, expected, rel_tol=1e-12):
                raise ValueError("alpha_n must equal 1 - (1 - p)^(1/n)")
        return self


class CalibrationTrace(BaseModel):
    model_config = ConfigDict(frozen=True)

    c0: float
    outlier: float
    alpha_n: float
    outlier_alpha: float
    residual: float
    steps: tuple[tuple[float, float], ...]
