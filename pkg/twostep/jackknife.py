"""Delete-one jackknife of the whole two-step pipeline."""
from __future__ import annotations

import enum
import functools
import logging

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigurationError, JackknifeError, TwoStepError
from .firststep import loo_mu
from .gmm import solve_gmm
from utils.workers import map_indexed

if TYPE_CHECKING:
    from typing import Callable, Optional
    from .firststep import Dataset, FirstStepFit
    from .gmm import GmmConfig, GmmSolution, MomentModel

logger = logging.getLogger(__name__)

# deletions start at θ̂, so their step tolerance is tightened by this factor
WARM_START_TIGHTENING = 1e-2


@dataclass(frozen=True)
class JackknifeResult:
    theta_hat: np.ndarray
    bias_hat: np.ndarray
    var_hat: np.ndarray
    theta_loo: np.ndarray
    theta_dot: np.ndarray
    failed_deletions: tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return self.theta_loo.shape[0]

    @property
    def theta_corrected(self) -> np.ndarray:
        return self.theta_hat - self.bias_hat


def deletion_config(config: GmmConfig, theta_start: np.ndarray) -> GmmConfig:
    return replace(config, theta_init=theta_start, step_tol=config.step_tol * WARM_START_TIGHTENING)


def _delete_one(ell: int, *, model: MomentModel, data: Dataset, fit: Optional[FirstStepFit],
                config: GmmConfig) -> Optional[np.ndarray]:
    weights = np.ones(data.n)
    weights[ell] = 0.0
    try:
        mu = np.zeros(data.n) if fit is None else loo_mu(fit, data.r, ell, mu=fit.mu_hat)
        return solve_gmm(model, data, mu, config, weights, geometry=False).theta_hat
    except TwoStepError as e:
        logger.warning('Deletion %s failed: %s', ell, e)
        return None


def jackknife_moments(theta_hat: np.ndarray, theta_loo: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(θ̂^(·), B̂, V̂) from the full-sample estimate and the n deletion estimates."""
    n = theta_loo.shape[0]
    theta_dot = theta_loo.mean(axis=0)
    bias = (n - 1) * (theta_dot - theta_hat)
    dev = theta_loo - theta_dot
    var = (n - 1) / n * (dev.T @ dev)
    return theta_dot, bias, (var + var.T) / 2


def jackknife_two_step(model: MomentModel, data: Dataset, fit: Optional[FirstStepFit], config: GmmConfig, *,
                       solution: Optional[GmmSolution] = None, workers: int = 1) -> JackknifeResult:
    """Jackknife bias and variance of θ̂.

    Each deletion reuses the full-sample first step through the
    leave-one-out update and re-solves the second step with observation ℓ
    weighted zero. ``fit`` None means there is no first step (μ ≡ 0).
    Any failed deletion raises :class:`JackknifeError`."""
    n = data.n
    if n < model.dim_theta + 2:
        raise ConfigurationError(f'The jackknife needs at least {model.dim_theta + 2} observations, got {n}.')
    if solution is None:
        mu = np.zeros(n) if fit is None else fit.mu_hat
        solution = solve_gmm(model, data, mu, config, geometry=False)
    theta_hat = solution.theta_hat

    job = functools.partial(_delete_one, model=model, data=data, fit=fit,
                            config=deletion_config(config, theta_hat))
    estimates = map_indexed(job, n, workers)
    failed = tuple(i for i, est in enumerate(estimates) if est is None)
    if failed:
        raise JackknifeError(failed)

    theta_loo = np.vstack(estimates)
    theta_dot, bias, var = jackknife_moments(theta_hat, theta_loo)
    logger.debug('Jackknife bias %s', bias)
    return JackknifeResult(theta_hat=theta_hat, bias_hat=bias, var_hat=var, theta_loo=theta_loo,
                           theta_dot=theta_dot)


class CorrectionMethod(str, enum.Enum):
    PLUG_IN = 'plug-in'
    LINEARIZED = 'linearized'
    DIRECT = 'direct'


@dataclass(frozen=True)
class Functional:
    """A smooth scalar functional φ(θ) with its gradient φ̇(θ)."""

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    name: str = 'phi'

    def grad_at(self, theta: np.ndarray) -> np.ndarray:
        grad = np.asarray(self.gradient(theta), dtype=float)
        if grad.shape != theta.shape:
            raise ValueError(f'Gradient of {self.name} has shape {grad.shape}, expected {theta.shape}.')
        return grad

    @classmethod
    def coordinate(cls, j: int, name: Optional[str] = None) -> Functional:
        def value(theta):
            return float(theta[j])

        def gradient(theta):
            e = np.zeros_like(theta, dtype=float)
            e[j] = 1.0
            return e
        return cls(value, gradient, name or f'theta[{j}]')

    @classmethod
    def linear(cls, a: np.ndarray, name: str = 'linear') -> Functional:
        a = np.asarray(a, dtype=float)
        return cls(lambda theta: float(a @ theta), lambda theta: a.copy(), name)


@dataclass(frozen=True)
class FunctionalEstimate:
    name: str
    estimate: float
    corrected: float
    bias: float
    variance: float
    method: CorrectionMethod

    @property
    def std_error(self) -> float:
        return float(np.sqrt(max(self.variance, 0.0)))


def bias_correct_functional(theta_hat: np.ndarray, result: JackknifeResult, phi: Functional,
                            method: CorrectionMethod | str = CorrectionMethod.LINEARIZED) -> FunctionalEstimate:
    method = CorrectionMethod(method)
    theta_hat = np.asarray(theta_hat, dtype=float)
    value = phi.value(theta_hat)
    grad = phi.grad_at(theta_hat)
    if method is CorrectionMethod.DIRECT:
        values = np.array([phi.value(row) for row in result.theta_loo])
        n = values.shape[0]
        mean = values.mean()
        bias = (n - 1) * (mean - value)
        variance = (n - 1) / n * float(np.sum((values - mean) ** 2))
        return FunctionalEstimate(phi.name, value, value - bias, bias, variance, method)

    variance = float(grad @ result.var_hat @ grad)
    if method is CorrectionMethod.PLUG_IN:
        corrected = phi.value(theta_hat - result.bias_hat)
        bias = value - corrected
    else:
        bias = float(grad @ result.bias_hat)
        corrected = value - bias
    return FunctionalEstimate(phi.name, value, corrected, bias, variance, method)
