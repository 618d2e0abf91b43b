"""Marginal treatment effects on a linear-probability propensity score.

The outcome block of the :class:`Dataset` is laid out as ``y[:, 0] = Y`` and
``y[:, 1:] = X``; the first-step response is the treatment indicator T and Z
holds the instruments (including an intercept)."""
from __future__ import annotations

import enum
import logging
import math

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Protocol

import numpy as np
import pandas as pd
import scipy.integrate

from .bootstrap import WeightDistribution, bootstrap_statistic, normal_interval, percentile_t_interval
from .errors import ConfigurationError, DataIngestionError, OracleInputError, TreatmentCodingError
from .firststep import fit_least_squares
from .gmm import GmmConfig, MomentModel, SampleMean, sandwich_sigma, solve_gmm
from .jackknife import Functional, jackknife_two_step
from utils.checks import closest_match

if TYPE_CHECKING:
    from typing import Callable, Optional, Sequence
    from .bootstrap import InferenceReport
    from .firststep import Dataset, FirstStepFit
    from .gmm import GmmSolution
    from .jackknife import JackknifeResult

logger = logging.getLogger(__name__)

DEFAULT_GRID = np.round(np.linspace(0.01, 0.99, 99), 2)
DEFAULT_GRID.setflags(write=False)


class OutcomeSpec(ABC):
    """e(x, a, θ) = E[Y | X = x, P = a] with the derivatives the estimator and oracle use.

    ``x`` is an (n, p) covariate matrix and ``a`` an n-vector of propensities."""

    linear_in_theta = False

    @property
    @abstractmethod
    def dim_theta(self) -> int:
        ...

    @property
    @abstractmethod
    def n_covariates(self) -> int:
        ...

    @abstractmethod
    def value(self, x: np.ndarray, a: np.ndarray, theta: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def d_a(self, x: np.ndarray, a: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """∂e/∂a, the MTE τ(a|x)."""

    @abstractmethod
    def d_aa(self, x: np.ndarray, a: np.ndarray, theta: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def grad_theta(self, x: np.ndarray, a: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """∂e/∂θ, (n, d_θ)."""

    @abstractmethod
    def grad_theta_a(self, x: np.ndarray, a: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """∂²e/∂a∂θ, the gradient of τ(a|x) in θ."""

    @abstractmethod
    def grad_theta_aa(self, x: np.ndarray, a: np.ndarray, theta: np.ndarray) -> np.ndarray:
        ...

    def hess_theta(self, x: np.ndarray, a: np.ndarray, theta: np.ndarray) -> Optional[np.ndarray]:
        """∂²e/∂θ∂θ', (n, d_θ, d_θ); None when e is linear in θ."""
        return None


class PolynomialOutcome(OutcomeSpec):
    """e(x, a, θ) = x'γ + a·x'δ + Σ_{p≥2} θ_p a^p, with x including a constant.

    Powers of ``a`` up to ``interact_degree`` are interacted with the
    covariates; higher powers enter alone. Without covariates this is the
    polynomial θ₀ + θ₁a + … + θ_q a^q."""

    linear_in_theta = True

    def __init__(self, degree: int = 2, n_covariates: int = 0, interact_degree: int = 1):
        if degree < 1:
            raise ConfigurationError(f'Polynomial degree must be at least 1, got {degree}.')
        if n_covariates < 0 or interact_degree < 0:
            raise ConfigurationError('Covariate count and interaction degree must be non-negative.')
        self.degree = degree
        self._n_covariates = n_covariates
        self.interact_degree = interact_degree
        self.columns: list[tuple[int, Optional[int]]] = []
        for p in range(degree + 1):
            self.columns.append((p, None))
            if p <= interact_degree:
                self.columns.extend((p, j) for j in range(n_covariates))

    def __repr__(self):
        return (f'{type(self).__name__}(degree={self.degree}, n_covariates={self.n_covariates}, '
                f'interact_degree={self.interact_degree})')

    @property
    def dim_theta(self) -> int:
        return len(self.columns)

    @property
    def n_covariates(self) -> int:
        return self._n_covariates

    @property
    def names(self) -> list[str]:
        out = []
        for p, j in self.columns:
            power = '' if p == 0 else ('a' if p == 1 else f'a^{p}')
            cov = None if j is None else f'x{j + 1}'
            out.append('*'.join(filter(None, (power, cov))) or 'const')
        return out

    def design(self, x: np.ndarray, a: np.ndarray, order: int = 0) -> np.ndarray:
        """Columns of ∂^order e/∂a^order ∂θ."""
        a = np.asarray(a, dtype=float)
        out = np.zeros((a.shape[0], self.dim_theta))
        for c, (p, j) in enumerate(self.columns):
            if p < order:
                continue
            col = math.perm(p, order) * a ** (p - order)
            out[:, c] = col if j is None else col * x[:, j]
        return out

    def value(self, x, a, theta):
        return self.design(x, a) @ theta

    def d_a(self, x, a, theta):
        return self.design(x, a, 1) @ theta

    def d_aa(self, x, a, theta):
        return self.design(x, a, 2) @ theta

    def grad_theta(self, x, a, theta):
        return self.design(x, a)

    def grad_theta_a(self, x, a, theta):
        return self.design(x, a, 1)

    def grad_theta_aa(self, x, a, theta):
        return self.design(x, a, 2)


class MteModel(MomentModel):
    """Second step least squares of Y on e(X, P̂, θ) as the moment model
    m = ∂e/∂θ · (Y − e), evaluated at μ = P̂.

    With ``clamp`` the propensity is clipped to [0, 1] before entering e."""

    def __init__(self, outcome: OutcomeSpec, clamp: bool = False):
        self.outcome = outcome
        self.clamp = clamp
        self.linear_in_theta = outcome.linear_in_theta and not clamp

    def __repr__(self):
        return f'{type(self).__name__}({self.outcome!r}, clamp={self.clamp})'

    @property
    def dim_theta(self) -> int:
        return self.outcome.dim_theta

    @property
    def dim_moment(self) -> int:
        return self.outcome.dim_theta

    def _split(self, data: Dataset, mu: np.ndarray):
        y = data.y[:, 0]
        x = data.y[:, 1:1 + self.outcome.n_covariates]
        if self.clamp:
            return y, x, np.clip(mu, 0.0, 1.0), ((mu > 0) & (mu < 1)).astype(float)
        return y, x, mu, None

    def moments(self, data, mu, theta):
        y, x, a, _ = self._split(data, mu)
        resid = y - self.outcome.value(x, a, theta)
        return self.outcome.grad_theta(x, a, theta) * resid[:, None]

    def jacobian_theta(self, data, mu, theta):
        y, x, a, _ = self._split(data, mu)
        g = self.outcome.grad_theta(x, a, theta)
        jac = -np.einsum('ij,ik->ijk', g, g)
        hess = self.outcome.hess_theta(x, a, theta)
        if hess is not None:
            jac = jac + hess * (y - self.outcome.value(x, a, theta))[:, None, None]
        return jac

    def deriv_mu(self, data, mu, theta):
        y, x, a, inside = self._split(data, mu)
        o = self.outcome
        resid = y - o.value(x, a, theta)
        out = o.grad_theta_a(x, a, theta) * resid[:, None] - o.grad_theta(x, a, theta) * o.d_a(x, a, theta)[:, None]
        return out if inside is None else out * inside[:, None]

    def deriv_mu2(self, data, mu, theta):
        y, x, a, inside = self._split(data, mu)
        o = self.outcome
        resid = y - o.value(x, a, theta)
        out = (o.grad_theta_aa(x, a, theta) * resid[:, None]
               - 2 * o.grad_theta_a(x, a, theta) * o.d_a(x, a, theta)[:, None]
               - o.grad_theta(x, a, theta) * o.d_aa(x, a, theta)[:, None])
        return out if inside is None else out * inside[:, None]

    def closed_form(self, data: Dataset, mu: np.ndarray) -> np.ndarray:
        """Least squares of Y on ∂e/∂θ at P̂; exact when e is linear in θ."""
        y, x, a, _ = self._split(data, mu)
        design = self.outcome.grad_theta(x, a, np.zeros(self.dim_theta))
        return np.linalg.lstsq(design, y, rcond=None)[0]

    def tau_functional(self, x_point: np.ndarray, a: float) -> Functional:
        """τ(a|x) as a functional of θ, with gradient ∂²e/∂a∂θ."""
        x = np.asarray(x_point, dtype=float).reshape(1, -1)
        grid = np.array([float(a)])
        outcome = self.outcome

        def value(theta):
            return float(outcome.d_a(x, grid, theta)[0])

        def gradient(theta):
            return outcome.grad_theta_a(x, grid, theta)[0]
        return Functional(value, gradient, f'tau({a:g})')


MOMENT_MODELS: dict[str, Callable[[Dataset], MomentModel]] = {
    'mean': lambda data: SampleMean(data.y.shape[1]),
    'mte': lambda data: MteModel(PolynomialOutcome(2, data.y.shape[1] - 1)),
    'mte-cubic': lambda data: MteModel(PolynomialOutcome(3, data.y.shape[1] - 1)),
}


def build_moment_model(name: str, data: Dataset) -> MomentModel:
    try:
        factory = MOMENT_MODELS[name]
    except KeyError:
        hint = closest_match(name, MOMENT_MODELS)
        raise ConfigurationError(f"Unknown moment model '{name}'." + (f" Did you mean '{hint}'?" if hint else ''))
    return factory(data)


def check_treatment(data: Dataset):
    bad = np.flatnonzero((data.r != 0) & (data.r != 1))
    if bad.size:
        raise TreatmentCodingError(f'Treatment must be coded 0/1; row {bad[0]} has {data.r[bad[0]]:g} '
                                   f'({bad.size} offending rows).')
    if np.unique(data.r).size < 2:
        raise TreatmentCodingError(f'Treatment has no variation: every row is {data.r[0]:g}.')


def has_intercept(z: np.ndarray) -> bool:
    return bool(np.any(np.all(z == z[0], axis=0) & (z[0] != 0)))


@dataclass(frozen=True)
class MteOptions:
    grid: np.ndarray = field(default_factory=lambda: DEFAULT_GRID.copy())
    x_point: Optional[np.ndarray] = None
    jackknife: bool = True
    bootstrap: int = 0
    weights: str = 'rademacher'
    alpha: float = 0.05
    seed: int = 0
    workers: int = 1
    gmm: GmmConfig = field(default_factory=GmmConfig)

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f'alpha must lie in (0, 1), got {self.alpha}.')
        if self.bootstrap and not self.jackknife:
            raise ConfigurationError('Bootstrap intervals need the jackknife correction.')


@dataclass(frozen=True)
class MteEstimate:
    model: MteModel = field(repr=False)
    solution: GmmSolution = field(repr=False)
    propensity: FirstStepFit = field(repr=False)
    out_of_range: int
    x_point: np.ndarray
    grid: np.ndarray
    tau_hat: np.ndarray
    tau_bc: Optional[np.ndarray] = None
    ci_lower: Optional[np.ndarray] = None
    ci_upper: Optional[np.ndarray] = None
    interval_method: Optional[str] = None
    jackknife: Optional[JackknifeResult] = field(default=None, repr=False)
    report: Optional[InferenceReport] = field(default=None, repr=False)

    @property
    def theta_hat(self) -> np.ndarray:
        return self.solution.theta_hat

    def tau_at(self, a: float, theta: Optional[np.ndarray] = None) -> float:
        return self.model.tau_functional(self.x_point, a).value(self.theta_hat if theta is None else theta)

    @property
    def ate(self) -> float:
        return average_over_grid(self.grid, self.tau_hat)

    @property
    def ate_bc(self) -> Optional[float]:
        return None if self.tau_bc is None else average_over_grid(self.grid, self.tau_bc)

    def to_frame(self) -> pd.DataFrame:
        empty = np.full(self.grid.shape, np.nan)
        return pd.DataFrame({
            'a': self.grid,
            'tau_hat': self.tau_hat,
            'tau_bc': empty if self.tau_bc is None else self.tau_bc,
            'ci_lo': empty if self.ci_lower is None else self.ci_lower,
            'ci_hi': empty if self.ci_upper is None else self.ci_upper,
        })


def average_over_grid(grid: np.ndarray, values: np.ndarray) -> float:
    """Trapezoid average of τ over the grid range, the ATE when the grid spans (0, 1)."""
    return float(scipy.integrate.trapezoid(values, grid) / (grid[-1] - grid[0]))


def estimate_mte(data: Dataset, model: MteModel, options: Optional[MteOptions] = None) -> MteEstimate:
    options = options or MteOptions()
    check_treatment(data)
    if data.y.shape[1] != 1 + model.outcome.n_covariates:
        raise DataIngestionError(f'Outcome block has {data.y.shape[1]} columns; expected Y plus '
                                 f'{model.outcome.n_covariates} covariates.')
    if not has_intercept(data.z):
        logger.warning('Instrument matrix has no constant column; the propensity fit is forced through zero.')

    fit = fit_least_squares(data)
    p_hat = fit.mu_hat
    out_of_range = int(np.count_nonzero((p_hat < 0) | (p_hat > 1)))
    if out_of_range:
        logger.warning('%s fitted propensities fall outside [0, 1]%s', out_of_range,
                       ' and are clamped' if model.clamp else '')

    config = options.gmm
    if model.linear_in_theta and config.theta_init is None:
        config = GmmConfig(weight=config.weight, theta_init=model.closed_form(data, p_hat), max_iter=config.max_iter,
                           grad_tol=config.grad_tol, step_tol=config.step_tol)
    solution = solve_gmm(model, data, p_hat, config)

    x_point = (data.y[:, 1:].mean(axis=0) if options.x_point is None
               else np.asarray(options.x_point, dtype=float).reshape(-1))
    grid = np.asarray(options.grid, dtype=float)
    phis = [model.tau_functional(x_point, a) for a in grid]
    tau_hat = np.array([phi.value(solution.theta_hat) for phi in phis])
    result = dict(model=model, solution=solution, propensity=fit, out_of_range=out_of_range, x_point=x_point,
                  grid=grid, tau_hat=tau_hat)
    if not options.jackknife:
        return MteEstimate(**result)

    jack = jackknife_two_step(model, data, fit, config, solution=solution, workers=options.workers)
    tau_bc = np.array([phi.value(jack.theta_hat) - phi.grad_at(jack.theta_hat) @ jack.bias_hat for phi in phis])
    if options.bootstrap:
        report = bootstrap_statistic(model, data, fit, config, jack, WeightDistribution.from_name(options.weights),
                                     options.bootstrap, options.seed, workers=options.workers)
        intervals = [report.add_interval(percentile_t_interval(report, phi, options.alpha)) for phi in phis]
        method = 'percentile-t'
    else:
        report = None
        intervals = [normal_interval(jack, phi, options.alpha) for phi in phis]
        method = 'normal'
    return MteEstimate(**result, tau_bc=tau_bc, ci_lower=np.array([i.lower for i in intervals]),
                       ci_upper=np.array([i.upper for i in intervals]), interval_method=method, jackknife=jack,
                       report=report)


class ConditionalMoments(Protocol):
    """What the oracle needs to know about the data generating process,
    evaluated at the true propensities ``p`` and covariates ``x``."""

    def tau(self, p: np.ndarray, x: np.ndarray) -> np.ndarray:
        ...

    def dtau_dp(self, p: np.ndarray, x: np.ndarray) -> np.ndarray:
        ...

    def treated_mean(self, p: np.ndarray, x: np.ndarray) -> np.ndarray:
        """E[T·Y(1) | Z]."""

    def untreated_mean(self, p: np.ndarray, x: np.ndarray) -> np.ndarray:
        """E[(1 − T)·Y(0) | Z]."""


class CurvatureForm(str, enum.Enum):
    #: −[g_a·τ + ½g·τ']·Σ_j π_ij²σ_j², from ½E[m̈ | Z]
    THEOREM = 'theorem'
    #: +½[g_a·τ + ½g·τ']·Σ_j π_ij²σ_j², the bracket as usually printed
    PRINTED = 'printed'


@dataclass(frozen=True)
class OracleTerms:
    """Per-observation bias and influence terms and their assembly.

    ``bias`` is the leading bias of θ̂ (not √n-scaled), Σ·(1/n)ΣB_i, and
    ``variance`` the matching variance of θ̂, (1/n)·Σ[(1/n)ΣΨΨ']Σ'."""

    B: np.ndarray
    Psi: np.ndarray
    Sigma: np.ndarray
    bias: np.ndarray
    variance: np.ndarray
    form: CurvatureForm

    def functional_bias(self, gradient: np.ndarray) -> float:
        return float(gradient @ self.bias)

    def functional_variance(self, gradient: np.ndarray) -> float:
        return float(gradient @ self.variance @ gradient)


def curvature_weights(fit: FirstStepFit, sigma2: np.ndarray) -> np.ndarray:
    """s_i = Σ_j π_ij² σ_j² for every i."""
    if fit.hat is not None:
        return (fit.hat ** 2) @ sigma2
    out = np.empty(fit.n)
    for i in range(fit.n):
        column = fit.basis @ fit.basis[i]
        out[i] = (column ** 2) @ sigma2
    return out


def oracle_bias_variance(data: Dataset, fit: FirstStepFit, model: MteModel,
                         moments: Optional[ConditionalMoments] = None, propensity: Optional[np.ndarray] = None,
                         theta0: Optional[np.ndarray] = None,
                         form: CurvatureForm = CurvatureForm.THEOREM) -> OracleTerms:
    """Theoretical many-covariates bias and variance of θ̂ for a known DGP."""
    missing = [name for name, value in (('conditional moments', moments), ('propensity', propensity),
                                        ('theta0', theta0)) if value is None]
    if missing:
        raise OracleInputError(missing)
    form = CurvatureForm(form)
    p = np.asarray(propensity, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    n = data.n
    y, t = data.y[:, 0], data.r
    x = data.y[:, 1:1 + model.outcome.n_covariates]
    o = model.outcome

    g = o.grad_theta(x, p, theta0)
    g_a = o.grad_theta_a(x, p, theta0)
    tau = np.asarray(moments.tau(p, x), dtype=float)
    dtau = np.asarray(moments.dtau_dp(p, x), dtype=float)

    selection = (1 - p) * moments.treated_mean(p, x) - p * moments.untreated_mean(p, x)
    B = g_a * (selection * fit.leverage)[:, None]
    bracket = g_a * tau[:, None] + 0.5 * g * dtau[:, None]
    s = curvature_weights(fit, p * (1 - p))
    if form is CurvatureForm.THEOREM:
        B = B - bracket * s[:, None]
    else:
        B = B + 0.5 * bracket * s[:, None]

    Psi = g * (y - o.value(x, p, theta0))[:, None] - fit.project(g * tau[:, None]) * (t - p)[:, None]
    M = model.jacobian_theta(data, p, theta0).mean(axis=0)
    Sigma = sandwich_sigma(M, np.eye(model.dim_moment))
    bias = Sigma @ B.mean(axis=0)
    variance = Sigma @ (Psi.T @ Psi / n) @ Sigma.T / n
    return OracleTerms(B=B, Psi=Psi, Sigma=Sigma, bias=bias, variance=(variance + variance.T) / 2, form=form)
