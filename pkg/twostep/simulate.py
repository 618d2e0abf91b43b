"""Monte Carlo coverage study of the MTE estimator as the number of instruments grows."""
from __future__ import annotations

import enum
import functools
import logging
import math

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
import pandas as pd
import scipy.stats

from .bootstrap import WeightDistribution, bootstrap_statistic, percentile_t_interval
from .errors import SimulationSpecError, TwoStepError
from .firststep import Dataset, fit_least_squares
from .gmm import GmmConfig, solve_gmm
from .jackknife import jackknife_two_step
from .mte import MteModel, PolynomialOutcome, oracle_bias_variance
from utils.checks import closest_match
from utils.rng import StreamTag, stream
from utils.workers import map_indexed

if TYPE_CHECKING:
    from os import PathLike
    from typing import Optional

logger = logging.getLogger(__name__)

THETA0 = np.array([0.0, 1.0, -0.5])
INDEX_INSTRUMENTS = 4
INDEX_SCALE = 4.1
MAX_COVARIATES = 200
FLAG_FAILURE_RATE = 0.02


def true_mte(a: float) -> float:
    return 1.0 - a


class SimulationMoments:
    """Conditional moments of the simulation design, functions of the true propensity only."""

    def tau(self, p, x):
        return 1.0 - p

    def dtau_dp(self, p, x):
        return -np.ones_like(p)

    def treated_mean(self, p, x):
        return p - p ** 2 / 2

    def untreated_mean(self, p, x):
        return np.zeros_like(p)


@dataclass(frozen=True)
class DgpTruth:
    index: np.ndarray = field(repr=False)
    scale: float = 1.0
    theta0: np.ndarray = field(default_factory=THETA0.copy)
    moments: SimulationMoments = field(default_factory=SimulationMoments, repr=False)

    @property
    def propensity(self) -> np.ndarray:
        """E[T | Z] = min(1, index / scale)."""
        return np.minimum(1.0, self.index / self.scale)

    def tau(self, a: float) -> float:
        return true_mte(a)


def generate_dgp(n: int, k_max: int, rng: np.random.Generator,
                 index_scale: float = INDEX_SCALE) -> tuple[Dataset, DgpTruth]:
    """Draws one sample: Z = (1, Z_1, …, Z_{k_max−1}) with Z_ℓ ~ U[0, 1],
    T = 1[(0.1 + Z_1 + … + Z_4) / index_scale ≥ V], Y(0) = U_0, Y(1) = 0.5 + U_1 with
    U_0 ~ U[−1, 1] and U_1 | V ~ U[−0.5, 1.5 − 2V].

    The default scale maps the index onto (0, 1], so E[T | Z] is linear in Z and
    the least-squares first step is correctly specified. ``index_scale=1`` leaves
    the index unscaled; about 97% of units are then treated and the propensity is
    clipped at one."""
    if not 2 <= k_max <= MAX_COVARIATES:
        raise SimulationSpecError(f'k_max must lie in [2, {MAX_COVARIATES}], got {k_max}.')
    if index_scale <= 0:
        raise SimulationSpecError(f'index_scale must be positive, got {index_scale}.')
    instruments = rng.uniform(size=(n, max(k_max - 1, INDEX_INSTRUMENTS)))
    v = rng.uniform(size=n)
    u0 = rng.uniform(-1.0, 1.0, size=n)
    u1 = -0.5 + (2.0 - 2.0 * v) * rng.uniform(size=n)
    index = 0.1 + instruments[:, :INDEX_INSTRUMENTS].sum(axis=1)
    t = (index / index_scale >= v).astype(float)
    y = t * (0.5 + u1) + (1 - t) * u0
    z = np.column_stack([np.ones(n), instruments[:, :k_max - 1]])
    names = ('const',) + tuple(f'z{j}' for j in range(1, k_max))
    return Dataset(y=y, r=t, z=z, y_names=('y',), z_names=names), DgpTruth(index=index, scale=index_scale)


class InferenceMode(str, enum.Enum):
    ORACLE_NORMAL = 'oracle-normal'
    BOOTSTRAP = 'bootstrap-percentile-t'


@dataclass(frozen=True)
class SimulationSpec:
    n: int
    k_grid: tuple[int, ...]
    reps: int
    bootstrap_B: int = 0
    weights: str = 'rademacher'
    seed: int = 0
    eval_a: float = 0.5
    mode: InferenceMode = InferenceMode.ORACLE_NORMAL
    oracle: bool = False
    alpha: float = 0.05

    def __post_init__(self):
        try:
            object.__setattr__(self, 'mode', InferenceMode(self.mode))
        except ValueError:
            raise SimulationSpecError(f"Unknown inference mode '{self.mode}'.")
        object.__setattr__(self, 'k_grid', tuple(int(k) for k in self.k_grid))
        if self.reps < 2:
            raise SimulationSpecError(f'At least 2 replications are needed for a standard deviation, got {self.reps}.')
        if not self.k_grid:
            raise SimulationSpecError('k_grid is empty.')
        if min(self.k_grid) < 2 or max(self.k_grid) > MAX_COVARIATES:
            raise SimulationSpecError(f'k_grid values must lie in [2, {MAX_COVARIATES}], got {list(self.k_grid)}.')
        if self.n < max(self.k_grid) + 10:
            raise SimulationSpecError(f'n = {self.n} is too small for k = {max(self.k_grid)} (need n >= k + 10).')
        if not 0 < self.eval_a < 1:
            raise SimulationSpecError(f'eval_a must lie in (0, 1), got {self.eval_a}.')
        if not 0 < self.alpha < 1:
            raise SimulationSpecError(f'alpha must lie in (0, 1), got {self.alpha}.')
        if self.seed < 0:
            raise SimulationSpecError(f'seed must be non-negative, got {self.seed}.')
        if self.mode is InferenceMode.BOOTSTRAP and self.bootstrap_B < 50:
            raise SimulationSpecError(f'Bootstrap mode needs bootstrap_B >= 50, got {self.bootstrap_B}.')
        if self.mode is InferenceMode.BOOTSTRAP:
            WeightDistribution.from_name(self.weights)

    @classmethod
    def preset(cls, name: str) -> SimulationSpec:
        try:
            return cls(**PRESETS[name])
        except KeyError:
            hint = closest_match(name, PRESETS)
            raise SimulationSpecError(f"Unknown preset '{name}'." + (f" Did you mean '{hint}'?" if hint else ''))


PRESETS = {
    'smoke': dict(n=200, k_grid=(5,), reps=50),
    'paper-repro': dict(n=2000, k_grid=(5, 40, 80), reps=2000, oracle=True),
    'correct-spec': dict(n=1000, k_grid=(5,), reps=2000),
    'jackknife-effect': dict(n=1000, k_grid=(80,), reps=250, bootstrap_B=300, mode=InferenceMode.BOOTSTRAP),
}


class Outcome(NamedTuple):
    tau_hat: float
    tau_bc: float
    lower_bc: float
    upper_bc: float
    oracle_bias: float


def _estimate_k(data: Dataset, truth: DgpTruth, spec: SimulationSpec, rep: int, k: int) -> Outcome:
    model = MteModel(PolynomialOutcome(2))
    fit = fit_least_squares(data).cache_hat_matrix()
    config = GmmConfig(theta_init=model.closed_form(data, fit.mu_hat))
    solution = solve_gmm(model, data, fit.mu_hat, config, geometry=False)
    phi = model.tau_functional(np.empty(0), spec.eval_a)
    jack = jackknife_two_step(model, data, fit, config, solution=solution)
    theta = solution.theta_hat
    tau_hat = phi.value(theta)
    tau_bc = tau_hat - float(phi.grad_at(theta) @ jack.bias_hat)

    lower = upper = math.nan
    if spec.mode is InferenceMode.BOOTSTRAP:
        report = bootstrap_statistic(model, data, fit, config, jack, WeightDistribution.from_name(spec.weights),
                                     spec.bootstrap_B, spec.seed,
                                     stream_key=(StreamTag.REPLICATION_BOOTSTRAP, rep, k))
        interval = percentile_t_interval(report, phi, spec.alpha)
        lower, upper = interval.lower, interval.upper

    oracle = math.nan
    if spec.oracle:
        terms = oracle_bias_variance(data, fit, model, truth.moments, truth.propensity, truth.theta0)
        oracle = terms.functional_bias(phi.grad_at(truth.theta0))
    return Outcome(tau_hat, tau_bc, lower, upper, oracle)


def _replicate(rep: int, *, spec: SimulationSpec) -> list[Optional[Outcome]]:
    data, truth = generate_dgp(spec.n, max(spec.k_grid), stream(spec.seed, StreamTag.REPLICATION, rep))
    outcomes = []
    for k in spec.k_grid:
        try:
            outcomes.append(_estimate_k(data.first_covariates(k), truth, spec, rep, k))
        except TwoStepError as e:
            logger.warning('Replication %s failed at k=%s: %s', rep, k, e)
            outcomes.append(None)
    return outcomes


class SimulationRow(NamedTuple):
    k: int
    estimator: str
    bias: float
    sd: float
    rmse: float
    coverage: float
    length: float
    failures: int
    oracle_bias: float
    flagged: bool


COLUMNS = ['k', 'bias', 'sd', 'rmse', 'coverage', 'length', 'estimator', 'failures', 'oracle_bias']


@dataclass(frozen=True)
class SimulationTable:
    """Bias, sd and rmse are √n-scaled; coverage and length are not."""

    spec: SimulationSpec
    rows: tuple[SimulationRow, ...]
    estimates: dict[tuple[int, str], np.ndarray] = field(repr=False)

    @property
    def flagged(self) -> bool:
        return any(row.flagged for row in self.rows)

    def row(self, k: int, estimator: str) -> SimulationRow:
        for row in self.rows:
            if row.k == k and row.estimator == estimator:
                return row
        raise KeyError((k, estimator))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([row._asdict() for row in self.rows])
        return frame[COLUMNS]

    def to_csv(self, path: str | PathLike):
        self.to_frame().to_csv(path, index=False, float_format='%.6f', lineterminator='\n')

    def to_text(self) -> str:
        return self.to_frame().to_string(index=False, float_format=lambda v: f'{v:.4f}') + '\n'


def _row(k: int, estimator: str, estimates: np.ndarray, covered: np.ndarray, lengths: np.ndarray,
         failures: int, oracle: float, spec: SimulationSpec) -> SimulationRow:
    root_n = math.sqrt(spec.n)
    err = estimates - true_mte(spec.eval_a)
    bias = root_n * float(err.mean())
    sd = root_n * float(estimates.std())
    flagged = failures > FLAG_FAILURE_RATE * spec.reps
    if flagged:
        logger.warning('k=%s %s: %s of %s replications failed', k, estimator, failures, spec.reps)
    return SimulationRow(k, estimator, bias, sd, math.hypot(bias, sd), float(covered.mean()), float(lengths.mean()),
                         failures, oracle, flagged)


def run_monte_carlo(spec: SimulationSpec, workers: int = 1) -> SimulationTable:
    logger.info('Running %s replications at n=%s for k in %s (%s)', spec.reps, spec.n, list(spec.k_grid),
                spec.mode.value)
    results = map_indexed(functools.partial(_replicate, spec=spec), spec.reps, workers)
    z = float(scipy.stats.norm.ppf(1 - spec.alpha / 2))
    truth = true_mte(spec.eval_a)
    rows, estimates = [], {}
    for j, k in enumerate(spec.k_grid):
        done = [rep[j] for rep in results if rep[j] is not None]
        failures = spec.reps - len(done)
        if len(done) < 2:
            raise SimulationSpecError(f'Only {len(done)} replications succeeded at k={k}.')
        tau_hat = np.array([o.tau_hat for o in done])
        tau_bc = np.array([o.tau_bc for o in done])
        oracle = math.sqrt(spec.n) * float(np.mean([o.oracle_bias for o in done])) if spec.oracle else math.nan
        estimates[(k, 'conventional')] = tau_hat
        estimates[(k, 'jackknife')] = tau_bc

        # oracle-normal: Studentize by the across-replication sd
        se = float(tau_hat.std())
        rows.append(_row(k, 'conventional', tau_hat, np.abs(tau_hat - truth) <= z * se,
                         np.full(tau_hat.shape, 2 * z * se), failures, oracle, spec))
        if spec.mode is InferenceMode.BOOTSTRAP:
            lower = np.array([o.lower_bc for o in done])
            upper = np.array([o.upper_bc for o in done])
            covered, lengths = (lower <= truth) & (truth <= upper), upper - lower
        else:
            se_bc = float(tau_bc.std())
            covered, lengths = np.abs(tau_bc - truth) <= z * se_bc, np.full(tau_bc.shape, 2 * z * se_bc)
        rows.append(_row(k, 'jackknife', tau_bc, covered, lengths, failures, math.nan, spec))
    return SimulationTable(spec=spec, rows=tuple(rows), estimates=estimates)
