"""Wild first-step plus multiplier second-step bootstrap of the bias-corrected
Studentized statistic, and percentile-t intervals built from it."""
from __future__ import annotations

import enum
import functools
import logging
import math

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np
import scipy.stats

from .errors import (BootstrapFailureError, ConfigurationError, EmptyDrawError, TwoStepError,
                     WeightDistributionError)
from .firststep import loo_mu
from .gmm import solve_gmm
from .jackknife import Functional, bias_correct_functional, deletion_config
from utils.rng import StreamTag, stream
from utils.workers import map_indexed

if TYPE_CHECKING:
    from typing import Optional, Sequence
    from .firststep import Dataset, FirstStepFit
    from .gmm import GmmConfig, MomentModel
    from .jackknife import JackknifeResult

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_DRAWS = 500
MIN_DRAWS = 50
MOMENT_TOLERANCE = 1e-12
EIGEN_FLOOR = 1e-12
MAX_FAILURE_RATE = 0.01
# guards ceil(alpha * B) against representation error, e.g. 0.025 * 200
QUANTILE_SLACK = 1e-9


class WeightKind(str, enum.Enum):
    RADEMACHER = 'rademacher'
    WEBB6 = 'webb6'
    CUSTOM = 'custom'


@dataclass(frozen=True)
class WeightDistribution:
    """A discrete law for the bootstrap weights ω*."""

    kind: WeightKind
    support: tuple[float, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        if len(self.support) != len(self.probabilities) or not self.support:
            raise ConfigurationError('Weight support and probabilities must be non-empty and of equal length.')
        if any(p < 0 for p in self.probabilities) or not all(map(math.isfinite, self.support)):
            raise ConfigurationError('Weight probabilities must be non-negative and support points finite.')
        total = math.fsum(self.probabilities)
        if abs(total - 1) > MOMENT_TOLERANCE:
            raise WeightDistributionError('total probability', total, 1)
        mean, var, third = self.moments()
        if abs(mean - 1) > MOMENT_TOLERANCE:
            raise WeightDistributionError('mean', mean, 1)
        if abs(var - 1) > MOMENT_TOLERANCE:
            raise WeightDistributionError('variance', var, 1)
        if abs(third) > MOMENT_TOLERANCE:
            raise WeightDistributionError('third central moment', third, 0)

    def moments(self) -> tuple[float, float, float]:
        """Mean, variance and third central moment, summed exactly on the support."""
        mean = math.fsum(p * v for v, p in zip(self.support, self.probabilities))
        var = math.fsum(p * (v - mean) ** 2 for v, p in zip(self.support, self.probabilities))
        third = math.fsum(p * (v - mean) ** 3 for v, p in zip(self.support, self.probabilities))
        return mean, var, third

    @classmethod
    def rademacher(cls) -> WeightDistribution:
        return cls(WeightKind.RADEMACHER, (0.0, 2.0), (0.5, 0.5))

    @classmethod
    def webb6(cls) -> WeightDistribution:
        offsets = (math.sqrt(1.5), 1.0, math.sqrt(0.5))
        support = tuple(1 + s * o for o in offsets for s in (-1, 1))
        return cls(WeightKind.WEBB6, support, (1 / 6,) * 6)

    @classmethod
    def custom(cls, support: Sequence[float], probabilities: Sequence[float]) -> WeightDistribution:
        return cls(WeightKind.CUSTOM, tuple(map(float, support)), tuple(map(float, probabilities)))

    @classmethod
    def from_name(cls, name: str) -> WeightDistribution:
        name = name.lower()
        if name == 'rademacher':
            return cls.rademacher()
        if name in ('webb6', 'webb'):
            return cls.webb6()
        raise ConfigurationError(f"Unknown weight distribution '{name}' (use rademacher or webb6).")

    @property
    def name(self) -> str:
        return self.kind.value


def draw_weights(dist: WeightDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(np.asarray(dist.support), size=n, p=np.asarray(dist.probabilities))


def wild_first_step(fit: FirstStepFit, r: np.ndarray, omega: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(r*, μ̂*) with r* = μ̂ + (ω − 1)(r − μ̂) and μ̂* = Πr*.

    Πr* is computed as μ̂ + Π((ω − 1)(r − μ̂)) from the stored factor, which
    reproduces μ̂ exactly when ω ≡ 1."""
    perturbation = (np.asarray(omega, dtype=float) - 1.0) * (np.asarray(r, dtype=float) - fit.mu_hat)
    return fit.mu_hat + perturbation, fit.mu_hat + fit.project(perturbation)


def inverse_sqrt(matrix: np.ndarray) -> tuple[np.ndarray, bool]:
    """Symmetric inverse square root with eigenvalues floored at 1e-12·trace.

    Returns the matrix and whether any eigenvalue was floored."""
    vals, vecs = np.linalg.eigh((matrix + matrix.T) / 2)
    trace = float(np.trace(matrix))
    floor = EIGEN_FLOOR * trace if trace > 0 else np.finfo(float).tiny
    floored = bool(np.any(vals < floor))
    vals = np.maximum(vals, floor)
    return (vecs / np.sqrt(vals)) @ vecs.T, floored


@dataclass(frozen=True)
class BootstrapDraw:
    theta_star: np.ndarray
    bias_star: np.ndarray
    var_star: np.ndarray
    t_star: np.ndarray
    weights: np.ndarray = field(repr=False)
    floored: bool = False


def bootstrap_draw(model: MomentModel, data: Dataset, fit: Optional[FirstStepFit], config: GmmConfig,
                   theta_hat: np.ndarray, omega: np.ndarray) -> BootstrapDraw:
    """One bootstrap draw for the weight vector ``omega``.

    θ̂* solves the ω-weighted problem at μ̂*; the jackknife under the bootstrap
    deletes ℓ from the wild first step and lowers ω_ℓ by one in the second
    step. Deletions with ω_ℓ = 0 carry no weight in θ̂*^(·) or V̂* and are
    skipped."""
    n = data.n
    omega = np.asarray(omega, dtype=float)
    if fit is None:
        r_star = mu_star = np.zeros(n)
    else:
        r_star, mu_star = wild_first_step(fit, data.r, omega)
    theta_star = solve_gmm(model, data, mu_star, replace(config, theta_init=theta_hat), omega,
                           geometry=False).theta_hat

    inner = deletion_config(config, theta_star)
    theta_loo = np.zeros((n, theta_star.shape[0]))
    for ell in np.flatnonzero(omega):
        weights = omega.copy()
        weights[ell] -= 1.0
        mu_loo = mu_star if fit is None else loo_mu(fit, r_star, ell, mu=mu_star)
        theta_loo[ell] = solve_gmm(model, data, mu_loo, inner, weights, geometry=False).theta_hat

    theta_dot = (omega @ theta_loo) / n
    bias_star = (n - 1) * (theta_dot - theta_star)
    dev = theta_loo - theta_dot
    var_star = (n - 1) / n * ((omega[:, None] * dev).T @ dev)
    var_star = (var_star + var_star.T) / 2
    root, floored = inverse_sqrt(var_star)
    t_star = root @ (theta_star - theta_hat - bias_star)
    return BootstrapDraw(theta_star=theta_star, bias_star=bias_star, var_star=var_star, t_star=t_star,
                         weights=omega, floored=floored)


def _draw(b: int, *, model: MomentModel, data: Dataset, fit: Optional[FirstStepFit], config: GmmConfig,
          theta_hat: np.ndarray, dist: WeightDistribution, seed: int, key: tuple[int, ...]) -> Optional[BootstrapDraw]:
    omega = draw_weights(dist, data.n, stream(seed, *key, b))
    try:
        return bootstrap_draw(model, data, fit, config, theta_hat, omega)
    except TwoStepError as e:
        logger.warning('Bootstrap draw %s failed: %s', b, e)
        return None


def empirical_quantile(draws: np.ndarray, alpha: float) -> float:
    """inf{t : F̂(t) ≥ α} for the empirical distribution of ``draws``."""
    draws = np.asarray(draws, dtype=float)
    if draws.size == 0:
        raise EmptyDrawError('No bootstrap draws to take quantiles from.')
    ordered = np.sort(draws)
    index = max(math.ceil(alpha * ordered.size - QUANTILE_SLACK) - 1, 0)
    return float(ordered[min(index, ordered.size - 1)])


@dataclass(frozen=True)
class Interval:
    name: str
    lower: float
    upper: float
    estimate: float
    corrected: float
    std_error: float
    alpha: float
    method: str
    q_lower: Optional[float] = None
    q_upper: Optional[float] = None

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return {'name': self.name, 'lower': self.lower, 'upper': self.upper, 'estimate': self.estimate,
                'corrected': self.corrected, 'std_error': self.std_error, 'alpha': self.alpha,
                'method': self.method, 'q_lower': self.q_lower, 'q_upper': self.q_upper}


@dataclass
class InferenceReport:
    """Full-sample estimates, their jackknife correction and the bootstrap draws.

    Intervals are added per scalar functional after construction."""

    theta_hat: np.ndarray
    bias_hat: np.ndarray
    var_hat: np.ndarray
    theta_star: np.ndarray
    bias_star: np.ndarray
    var_star: np.ndarray
    t_draws: np.ndarray
    seed: Optional[int]
    weights: Optional[str]
    failures: int = 0
    floored: int = 0
    intervals: dict[str, Interval] = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.t_draws.shape[0]

    def quantile(self, level: float, coordinate: int = 0) -> float:
        """Empirical quantile of the multivariate T* draws, one coordinate at a time."""
        return empirical_quantile(self.t_draws[:, coordinate], level)

    def add_interval(self, interval: Interval) -> Interval:
        self.intervals[interval.name] = interval
        return interval

    def to_dict(self) -> dict:
        return {
            'schema_version': SCHEMA_VERSION,
            'theta_hat': self.theta_hat.tolist(),
            'bias_hat': self.bias_hat.tolist(),
            'var_hat': self.var_hat.tolist(),
            't_draws': self.t_draws.tolist(),
            'quantiles': {name: {'lower': i.q_lower, 'upper': i.q_upper, 'alpha': i.alpha}
                          for name, i in self.intervals.items()},
            'intervals': {name: i.to_dict() for name, i in self.intervals.items()},
            'seed': self.seed,
            'n_draws': self.n_draws,
            'failures': self.failures,
            'floored': self.floored,
            'weights': self.weights,
        }


def empty_report(jackknife: JackknifeResult) -> InferenceReport:
    """A report without bootstrap draws; intervals fall back to the normal approximation."""
    d = jackknife.theta_hat.shape[0]
    return InferenceReport(theta_hat=jackknife.theta_hat, bias_hat=jackknife.bias_hat, var_hat=jackknife.var_hat,
                           theta_star=np.empty((0, d)), bias_star=np.empty((0, d)), var_star=np.empty((0, d, d)),
                           t_draws=np.empty((0, d)), seed=None, weights=None)


def bootstrap_statistic(model: MomentModel, data: Dataset, fit: Optional[FirstStepFit], config: GmmConfig,
                        jackknife: JackknifeResult, dist: WeightDistribution, B: int = DEFAULT_DRAWS,
                        seed: int = 0, *, workers: int = 1,
                        stream_key: tuple[int, ...] = (StreamTag.BOOTSTRAP,)) -> InferenceReport:
    """Runs ``B`` bootstrap draws around the full-sample θ̂ and its jackknife.

    Draw b uses the stream (seed, *stream_key, b). More than 1% failed draws
    raise :class:`BootstrapFailureError`; fewer are dropped and counted."""
    if B < MIN_DRAWS:
        raise ConfigurationError(f'At least {MIN_DRAWS} bootstrap draws are required, got {B}.')
    job = functools.partial(_draw, model=model, data=data, fit=fit, config=config, theta_hat=jackknife.theta_hat,
                            dist=dist, seed=seed, key=tuple(int(k) for k in stream_key))
    draws = [d for d in map_indexed(job, B, workers) if d is not None]
    failures = B - len(draws)
    if failures > MAX_FAILURE_RATE * B:
        raise BootstrapFailureError(failures, B)
    if failures:
        logger.warning('%s of %s bootstrap draws failed and were dropped', failures, B)
    floored = sum(d.floored for d in draws)
    if floored:
        logger.warning('%s bootstrap variance matrices had eigenvalues floored', floored)
    d = jackknife.theta_hat.shape[0]
    return InferenceReport(
        theta_hat=jackknife.theta_hat, bias_hat=jackknife.bias_hat, var_hat=jackknife.var_hat,
        theta_star=np.array([x.theta_star for x in draws]).reshape(-1, d),
        bias_star=np.array([x.bias_star for x in draws]).reshape(-1, d),
        var_star=np.array([x.var_star for x in draws]).reshape(-1, d, d),
        t_draws=np.array([x.t_star for x in draws]).reshape(-1, d),
        seed=seed, weights=dist.name, failures=failures, floored=floored,
    )


def studentized_draws(report: InferenceReport, phi: Functional) -> np.ndarray:
    """T*_φ = (φ(θ̂*) − φ(θ̂) − φ̇(θ̂*)B̂*) / √(φ̇(θ̂*)V̂*φ̇(θ̂*)')."""
    value = phi.value(report.theta_hat)
    out = np.empty(report.n_draws)
    for b in range(report.n_draws):
        theta_star = report.theta_star[b]
        grad = phi.grad_at(theta_star)
        var = float(grad @ report.var_star[b] @ grad)
        scale = math.sqrt(var) if var > 0 else math.nan
        out[b] = (phi.value(theta_star) - value - grad @ report.bias_star[b]) / scale
    bad = ~np.isfinite(out)
    if bad.any():
        logger.warning('Dropping %s draws with zero variance for %s', int(bad.sum()), phi.name)
    return out[~bad]


def percentile_t_interval(report: InferenceReport, phi: Functional, alpha: float = 0.05) -> Interval:
    """Equal-tailed percentile-t interval for φ(θ) around the jackknife-corrected estimate."""
    if not 0 < alpha < 1:
        raise ConfigurationError(f'alpha must lie in (0, 1), got {alpha}.')
    draws = studentized_draws(report, phi)
    q_lower = empirical_quantile(draws, alpha / 2)
    q_upper = empirical_quantile(draws, 1 - alpha / 2)
    value = phi.value(report.theta_hat)
    grad = phi.grad_at(report.theta_hat)
    corrected = value - float(grad @ report.bias_hat)
    se = math.sqrt(max(float(grad @ report.var_hat @ grad), 0.0))
    return Interval(phi.name, corrected - q_upper * se, corrected - q_lower * se, value, corrected, se, alpha,
                    'percentile-t', q_lower, q_upper)


def normal_interval(jackknife: JackknifeResult, phi: Functional, alpha: float = 0.05, *,
                    corrected: bool = True) -> Interval:
    """Normal-approximation interval from V̂, centred at the corrected (or raw) estimate."""
    if not 0 < alpha < 1:
        raise ConfigurationError(f'alpha must lie in (0, 1), got {alpha}.')
    est = bias_correct_functional(jackknife.theta_hat, jackknife, phi)
    center = est.corrected if corrected else est.estimate
    z = float(scipy.stats.norm.ppf(1 - alpha / 2))
    return Interval(phi.name, center - z * est.std_error, center + z * est.std_error, est.estimate, est.corrected,
                    est.std_error, alpha, 'normal', -z, z)
