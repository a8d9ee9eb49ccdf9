import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from app.core.errors import (
    DegenerateComponentError,
    InternalError,
    InvalidArgumentError,
)
from app.mixture.families import Family, FloatArray
from app.mixture.model import check_regime, log_joint, log_likelihood
from app.schemas import (
    Dataset,
    FitConfig,
    FitResult,
    ImproperNoise,
    MixtureParams,
    NoNoise,
    RangeUniform,
)

logger = logging.getLogger(__name__)

Regime = NoNoise | RangeUniform | ImproperNoise

# Components with less responsibility mass than this are frozen
DEGENERATE_PI = 1e-12
INITIAL_NOISE_PI = 0.05
# Allowed per-iteration log-likelihood decrease, relative to |L| + 1
MONOTONICITY_TOL = 1e-9


@dataclass(frozen=True)
class Responsibilities:
    """Posterior weights p_ij; with noise, column 0 holds p_i0"""

    matrix: FloatArray
    has_noise: bool

    @property
    def components(self) -> FloatArray:
        return self.matrix[:, 1:] if self.has_noise else self.matrix

    @property
    def noise(self) -> FloatArray | None:
        return self.matrix[:, 0] if self.has_noise else None

    @property
    def s(self) -> int:
        return int(self.components.shape[1])


@dataclass
class _Run:
    start_index: int
    params: MixtureParams
    loglik: float
    iterations: int = 0
    converged: bool = False
    trace: list[float] = field(default_factory=list)


def _estep_terms(params: MixtureParams, x: FloatArray) -> tuple[FloatArray, FloatArray]:
    terms = log_joint(params, x)
    totals = special.logsumexp(terms, axis=1)
    if not np.all(np.isfinite(totals)):
        bad = int(np.flatnonzero(~np.isfinite(totals))[0])
        raise InternalError(f"Zero mixture density at x={x[bad]}")
    return terms, totals


def weighted_objective(
    weights: FloatArray, data: Dataset, fam: Family, a: float, sigma: float
) -> float:
    """S(a, sigma) = sum_i w_i log((1/sigma) f((x_i - a)/sigma))"""
    z = (data.array - a) / sigma
    return math.fsum((weights * (fam.log_base(z) - math.log(sigma))).tolist())


def weighted_ml(
    weights: FloatArray,
    data: Dataset,
    fam: Family,
    sigma0: float,
    *,
    start: tuple[float, float] | None = None,
    max_iter: int = 200,
    tol: float = 1e-12,
) -> tuple[float, float]:
    """
    Maximize the weighted log-likelihood of one component subject to
    sigma >= sigma0. Normal is closed form; the other families iterate the
    re-weighting fixed point, which increases S at every step and keeps the
    location inside [xmin, xmax].
    """
    w = np.asarray(weights, dtype=np.float64)
    total = float(w.sum())
    if not total > 0.0:
        raise DegenerateComponentError()
    x = data.array
    mean = float(np.dot(w, x)) / total
    spread = math.sqrt(max(float(np.dot(w, (x - mean) ** 2)) / total, 0.0))
    if fam.closed_form_ml:
        return mean, max(sigma0, spread)

    a, sigma = start if start is not None else (mean, max(sigma0, spread))
    sigma = max(sigma, sigma0)
    for _ in range(max_iter):
        u = w * fam.mm_weights((x - a) / sigma)
        new_a = float(np.dot(u, x)) / float(u.sum())
        new_a = min(max(new_a, data.xmin), data.xmax)
        new_sigma = max(sigma0, math.sqrt(float(np.dot(u, (x - new_a) ** 2)) / total))
        done = abs(new_a - a) <= tol * (1.0 + abs(a)) and abs(new_sigma - sigma) <= (
            tol * sigma
        )
        a, sigma = new_a, new_sigma
        if done:
            break
    return a, sigma


class EMFitter:
    """Constrained EM for one family, noise regime and configuration"""

    def __init__(self, fam: Family, regime: Regime, cfg: FitConfig):
        self.fam = fam
        self.regime = regime
        self.cfg = cfg

    def e_step(self, params: MixtureParams, data: Dataset) -> Responsibilities:
        check_regime(params, data)
        terms, totals = _estep_terms(params, data.array)
        matrix = np.exp(terms - totals[:, np.newaxis])
        return Responsibilities(matrix=matrix, has_noise=params.regime.has_noise)

    def m_step(
        self,
        resp: Responsibilities,
        data: Dataset,
        previous: MixtureParams | None = None,
    ) -> MixtureParams:
        regime = self.regime.bind(data)
        if resp.has_noise != regime.has_noise:
            raise InvalidArgumentError("Responsibilities do not match the noise regime")
        columns = resp.components
        pis = columns.mean(axis=0)
        pi0 = float(resp.noise.mean()) if resp.noise is not None else 0.0
        locations = np.empty(resp.s)
        scales = np.empty(resp.s)
        for j in range(resp.s):
            start = None
            if previous is not None and previous.s == resp.s:
                component = previous.components[j]
                start = (component.a, component.sigma)
            try:
                if pis[j] < DEGENERATE_PI:
                    raise DegenerateComponentError()
                locations[j], scales[j] = weighted_ml(
                    columns[:, j],
                    data,
                    self.fam,
                    self.cfg.sigma0,
                    start=start,
                    max_iter=self.cfg.inner_iters,
                    tol=self.cfg.inner_tol,
                )
            except DegenerateComponentError:
                pis[j] = 0.0
                locations[j], scales[j] = data.xmin, self.cfg.sigma0
        total = pi0 + float(pis.sum())
        return MixtureParams.from_arrays(
            pis / total,
            locations,
            scales,
            sigma0=self.cfg.sigma0,
            family=self.fam.spec,
            pi0=pi0 / total,
            regime=regime,
        )

    def initial_params(self, data: Dataset, s: int, restart: int) -> MixtureParams:
        """
        Restart 0 puts locations at the i/(s+1) quantiles with the sample sd;
        odd restarts draw locations uniformly from the data, even ones by
        D^2 weighting, scales log-uniform in [sigma0, sd].
        """
        x = data.array
        sigma0 = self.cfg.sigma0
        sd = max(float(x.std()), sigma0)
        if restart == 0:
            locations = np.quantile(x, np.arange(1, s + 1) / (s + 1))
            scales = np.full(s, sd)
        else:
            rng = np.random.default_rng([self.cfg.seed, restart])
            if restart % 2:
                locations = rng.choice(x, size=s, replace=s > x.size)
            else:
                locations = self._d2_seeds(x, s, rng)
            scales = np.exp(rng.uniform(math.log(sigma0), math.log(sd), size=s))
        regime = self.regime.bind(data)
        pi0 = INITIAL_NOISE_PI if regime.has_noise else 0.0
        return MixtureParams.from_arrays(
            np.full(s, (1.0 - pi0) / s),
            locations,
            scales,
            sigma0=sigma0,
            family=self.fam.spec,
            pi0=pi0,
            regime=regime,
        )

    @staticmethod
    def _d2_seeds(x: FloatArray, s: int, rng: np.random.Generator) -> FloatArray:
        seeds = [float(rng.choice(x))]
        for _ in range(1, s):
            distance = np.min((x[:, np.newaxis] - np.array(seeds)) ** 2, axis=1)
            total = float(distance.sum())
            if total > 0.0:
                seeds.append(float(rng.choice(x, p=distance / total)))
            else:
                seeds.append(float(rng.choice(x)))
        return np.array(seeds)

    def prepare_start(self, params: MixtureParams, data: Dataset) -> MixtureParams:
        """Adapt a foreign starting point to this fitter's floor, family and regime"""
        regime = self.regime.bind(data)
        pi0 = params.pi0 if regime.has_noise else 0.0
        if regime.has_noise and pi0 == 0.0:
            pi0 = INITIAL_NOISE_PI
        pis = np.maximum(params.pis, 0.0)
        if pis.sum() > 0.0:
            pis = pis / pis.sum() * (1.0 - pi0)
        else:
            pis = np.full(params.s, (1.0 - pi0) / params.s)
        return MixtureParams.from_arrays(
            pis,
            np.clip(params.locations, data.xmin, data.xmax),
            np.maximum(params.scales, self.cfg.sigma0),
            sigma0=self.cfg.sigma0,
            family=self.fam.spec,
            pi0=pi0,
            regime=regime,
        )

    def _run(self, data: Dataset, run: _Run, max_iters: int) -> _Run:
        x = data.array
        params = run.params
        _, totals = _estep_terms(params, x)
        previous = math.fsum(totals.tolist())
        if not run.trace:
            run.trace.append(previous)
        for _ in range(max_iters):
            resp = self.e_step(params, data)
            params = self.m_step(resp, data, previous=params)
            _, totals = _estep_terms(params, x)
            current = math.fsum(totals.tolist())
            run.iterations += 1
            run.trace.append(current)
            if current < previous - MONOTONICITY_TOL * (abs(previous) + 1.0):
                logger.warning(
                    f"Log-likelihood decreased from {previous} to {current} "
                    f"in start {run.start_index}"
                )
            improvement = (current - previous) / (abs(previous) + 1.0)
            previous = current
            if improvement < self.cfg.rel_tol:
                run.converged = True
                break
        run.params = params
        run.loglik = previous
        return run

    def _run_all(self, data: Dataset, runs: list[_Run], max_iters: int) -> list[_Run]:
        if self.cfg.threads > 1 and len(runs) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.threads) as pool:
                return list(pool.map(lambda r: self._run(data, r, max_iters), runs))
        return [self._run(data, r, max_iters) for r in runs]

    def fit(
        self,
        data: Dataset,
        s: int,
        extra_starts: Sequence[MixtureParams] = (),
    ) -> FitResult:
        """
        Best of the configured restarts plus any extra starting points. Extra
        starts beyond ``screen_keep`` are screened by a short EM run first.
        """
        if s < 1:
            raise InvalidArgumentError(f"Component count must be >= 1, got {s}")
        if s > data.distinct:
            logger.warning(
                f"Fitting {s} components to {data.distinct} distinct points; "
                "proportions will degenerate"
            )
        restarts = self.cfg.restarts
        runs = [
            _Run(start_index=r, params=self.initial_params(data, s, r), loglik=-math.inf)
            for r in range(restarts)
        ]
        extras = [
            _Run(
                start_index=restarts + i,
                params=self.prepare_start(p, data),
                loglik=-math.inf,
            )
            for i, p in enumerate(extra_starts)
            if p.s == s
        ]
        if len(extras) > self.cfg.screen_keep:
            screened = self._run_all(data, extras, self.cfg.screen_iters)
            screened.sort(key=lambda r: (-r.loglik, r.start_index))
            extras = screened[: self.cfg.screen_keep]
        runs = self._run_all(data, runs, self.cfg.max_iters)
        runs.extend(self._run_all(data, extras, self.cfg.max_iters))

        best = max(runs, key=lambda r: (r.loglik, -r.start_index))
        for r in sorted(runs, key=lambda r: r.start_index):
            logger.debug(
                f"s={s} start {r.start_index}: loglik={r.loglik:.6f} "
                f"iterations={r.iterations} converged={r.converged}"
            )
        if not best.converged:
            logger.warning(
                f"EM for s={s} did not converge within {self.cfg.max_iters} iterations"
            )
        params = best.params.canonical()
        return FitResult(
            params=params,
            loglik=log_likelihood(params, data),
            iterations=best.iterations,
            converged=best.converged,
            restart_index=best.start_index,
            trace=tuple(best.trace),
        )


def insertion_starts(
    base: MixtureParams, data: Dataset, sigma0: float
) -> list[MixtureParams]:
    """
    Starting points for s + 1 components: the s-component solution plus a new
    component at each distinct data value with scale sigma0. The first start
    pads the solution with an empty component, so the best s + 1 fit is never
    worse than the s fit.
    """
    s = base.s
    weight = 1.0 / (s + 1)
    starts = [
        MixtureParams.from_arrays(
            np.append(base.pis, 0.0),
            np.append(base.locations, data.xmin),
            np.append(np.maximum(base.scales, sigma0), sigma0),
            sigma0=min(sigma0, base.sigma0),
            family=base.family,
            pi0=base.pi0,
            regime=base.regime,
        )
    ]
    for value in sorted(set(data.values)):
        starts.append(
            MixtureParams.from_arrays(
                np.append(base.pis * (1.0 - weight), weight),
                np.append(base.locations, value),
                np.append(np.maximum(base.scales, sigma0), sigma0),
                sigma0=min(sigma0, base.sigma0),
                family=base.family,
                pi0=base.pi0 * (1.0 - weight),
                regime=base.regime,
            )
        )
    return starts


def e_step(params: MixtureParams, data: Dataset) -> Responsibilities:
    fitter = EMFitter(params.fam, params.regime, FitConfig(sigma0=params.sigma0))
    return fitter.e_step(params, data)


def m_step(
    resp: Responsibilities,
    data: Dataset,
    fam: Family,
    regime: Regime,
    sigma0: float,
    previous: MixtureParams | None = None,
) -> MixtureParams:
    return EMFitter(fam, regime, FitConfig(sigma0=sigma0)).m_step(resp, data, previous)


def fit(
    data: Dataset,
    s: int,
    fam: Family,
    regime: Regime,
    cfg: FitConfig,
    extra_starts: Sequence[MixtureParams] = (),
) -> FitResult:
    return EMFitter(fam, regime, cfg).fit(data, s, extra_starts)


def fit_with_insertion(
    data: Dataset,
    s: int,
    fam: Family,
    regime: Regime,
    cfg: FitConfig,
    extra_starts: Sequence[MixtureParams] = (),
) -> FitResult:
    """Fit s components, also starting from insertions into the best s - 1 fit"""
    if s == 1:
        return fit(data, 1, fam, regime, cfg, extra_starts)
    smaller = fit_with_insertion(data, s - 1, fam, regime, cfg)
    starts = [*extra_starts, *insertion_starts(smaller.params, data, cfg.sigma0)]
    return fit(data, s, fam, regime, cfg, starts)
