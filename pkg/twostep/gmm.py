"""Generic second step: moment models, the weighted GMM solver and its plug-in geometry."""
from __future__ import annotations

import logging

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigurationError, GmmConvergenceError, RankDeficiencyError

if TYPE_CHECKING:
    from typing import Optional
    from .firststep import Dataset

logger = logging.getLogger(__name__)

PSD_TOLERANCE = 1e-10
ARMIJO_C = 1e-4
SHRINK = 0.5
MAX_CONDITION = 1e12
FD_STEP = 1e-6
JACOBIAN_TOLERANCE = 1e-6


class MomentModel(ABC):
    """An estimating equation m(w_i, μ_i, θ), evaluated for all rows at once.

    Row i of every callback may depend on the data only through row i of
    ``data`` and ``mu[i]``. Shapes: ``moments`` and the μ-derivatives return
    (n, d_m), ``jacobian_theta`` returns (n, d_m, d_θ)."""

    #: set by models whose moments are affine in θ
    linear_in_theta = False

    @property
    @abstractmethod
    def dim_theta(self) -> int:
        ...

    @property
    @abstractmethod
    def dim_moment(self) -> int:
        ...

    @abstractmethod
    def moments(self, data: Dataset, mu: np.ndarray, theta: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def jacobian_theta(self, data: Dataset, mu: np.ndarray, theta: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def deriv_mu(self, data: Dataset, mu: np.ndarray, theta: np.ndarray) -> np.ndarray:
        ...

    def deriv_mu2(self, data: Dataset, mu: np.ndarray, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f'{type(self).__name__} does not provide a second μ-derivative.')

    @property
    def has_deriv_mu2(self) -> bool:
        return type(self).deriv_mu2 is not MomentModel.deriv_mu2


class SampleMean(MomentModel):
    """m(w, μ, θ) = y − θ; ignores the first step."""

    linear_in_theta = True

    def __init__(self, dim: int = 1):
        self.dim = dim

    @property
    def dim_theta(self) -> int:
        return self.dim

    @property
    def dim_moment(self) -> int:
        return self.dim

    def moments(self, data, mu, theta):
        return data.y[:, :self.dim] - theta

    def jacobian_theta(self, data, mu, theta):
        return np.broadcast_to(-np.eye(self.dim), (data.n, self.dim, self.dim))

    def deriv_mu(self, data, mu, theta):
        return np.zeros((data.n, self.dim))

    def deriv_mu2(self, data, mu, theta):
        return np.zeros((data.n, self.dim))


@dataclass(frozen=True)
class GmmConfig:
    """Solver settings. ``weight`` None means the identity."""

    weight: Optional[np.ndarray] = None
    theta_init: Optional[np.ndarray] = None
    max_iter: int = 200
    grad_tol: float = 1e-10
    step_tol: float = 1e-12

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigurationError(f'max_iter must be positive, got {self.max_iter}.')
        if self.grad_tol <= 0 or self.step_tol <= 0:
            raise ConfigurationError('Solver tolerances must be positive.')
        if self.weight is not None:
            weight = np.array(self.weight, dtype=float)
            if weight.ndim != 2 or weight.shape[0] != weight.shape[1]:
                raise ConfigurationError(f'Weight matrix must be square, got shape {weight.shape}.')
            if not np.allclose(weight, weight.T, rtol=0, atol=PSD_TOLERANCE * max(1.0, np.abs(weight).max())):
                raise ConfigurationError('Weight matrix must be symmetric.')
            weight = (weight + weight.T) / 2
            smallest = np.linalg.eigvalsh(weight)[0]
            if smallest < -PSD_TOLERANCE:
                raise ConfigurationError(f'Weight matrix is not positive semi-definite (eigenvalue {smallest:.3e}).')
            weight.setflags(write=False)
            object.__setattr__(self, 'weight', weight)
        if self.theta_init is not None:
            init = np.array(self.theta_init, dtype=float).reshape(-1)
            init.setflags(write=False)
            object.__setattr__(self, 'theta_init', init)

    def weight_matrix(self, dim_moment: int) -> np.ndarray:
        if self.weight is None:
            return np.eye(dim_moment)
        if self.weight.shape[0] != dim_moment:
            raise ConfigurationError(f'Weight matrix is {self.weight.shape[0]}x{self.weight.shape[0]} '
                                     f'but the model has {dim_moment} moments.')
        return self.weight


@dataclass(frozen=True)
class GmmSolution:
    theta_hat: np.ndarray
    objective_value: float
    moment_avg: np.ndarray
    M_hat: Optional[np.ndarray]
    Sigma_hat: Optional[np.ndarray]
    converged: bool
    iterations: int
    termination: str
    grad_norm: float = field(default=0.0, compare=False)


def weight_root(weight: np.ndarray) -> np.ndarray:
    """Symmetric square root R of a PSD weight matrix, Ω = RR."""
    vals, vecs = np.linalg.eigh(weight)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def condition_number(a: np.ndarray) -> float:
    """Ratio of extreme singular values; infinite when ``a`` has fewer rows than columns."""
    if a.shape[0] < a.shape[1] or not np.all(np.isfinite(a)):
        return np.inf
    s = np.linalg.svd(a, compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else np.inf


def sandwich_sigma(M: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Σ = −(M'ΩM)⁻¹M'Ω, computed as −(RM)⁺R so the conditioning is that of RM."""
    root = weight_root(weight)
    scaled = root @ M
    if condition_number(scaled) > MAX_CONDITION:
        raise RankDeficiencyError("M'ΩM is singular at the solution.")
    return -np.linalg.pinv(scaled) @ root


def solve_gmm(model: MomentModel, data: Dataset, mu: np.ndarray, config: GmmConfig,
              weights: Optional[np.ndarray] = None, *, geometry: bool = True) -> GmmSolution:
    """Minimise ½ḡ(θ)'Ωḡ(θ), ḡ(θ) = (1/n)Σ w_i m(w_i, μ_i, θ).

    Gauss-Newton with Armijo backtracking. The step is the minimum-norm
    least-squares solution of RJ·s = −Rḡ (R = Ω^½), so an ill-conditioned or
    singular system still gives a Gauss-Newton direction; steepest descent is
    used only when that direction is not a descent direction. Just-identified
    models must reach ‖ḡ‖ ≤ grad_tol, otherwise :class:`GmmConvergenceError`
    is raised. The solver stops at an evaluated iterate, so restarting from a
    returned θ̂ with the same inputs returns θ̂.
    ``geometry=False`` skips M̂ and Σ̂ (used by the resampling loops)."""
    n = data.n
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (n,):
        raise ValueError(f'mu must have {n} entries, got shape {mu.shape}.')
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    weight = config.weight_matrix(model.dim_moment)
    theta = np.zeros(model.dim_theta) if config.theta_init is None else np.array(config.theta_init, dtype=float)
    if theta.shape != (model.dim_theta,):
        raise ConfigurationError(f'theta_init must have {model.dim_theta} entries, got {theta.shape[0]}.')
    just_identified = model.dim_moment == model.dim_theta

    def moment_mean(t: np.ndarray) -> np.ndarray:
        return (w[:, None] * model.moments(data, mu, t)).sum(axis=0) / n

    root = weight_root(weight)

    def objective(g: np.ndarray) -> float:
        return 0.5 * float(g @ weight @ g)

    def stationary(g: np.ndarray, grad_norm: float, scale: float) -> bool:
        if just_identified:
            return float(np.linalg.norm(g)) <= config.grad_tol
        return grad_norm <= config.grad_tol * scale

    termination = None
    gbar = moment_mean(theta)
    obj = objective(gbar)
    grad_norm = np.inf
    iterations = 0
    while iterations < config.max_iter:
        jac = np.einsum('i,ijk->jk', w, model.jacobian_theta(data, mu, theta)) / n
        grad = jac.T @ weight @ gbar
        grad_norm = float(np.linalg.norm(grad))
        scale = 1.0 + float(np.linalg.norm(theta))
        if stationary(gbar, grad_norm, scale):
            termination = 'gradient'
            break

        step = -np.linalg.lstsq(root @ jac, root @ gbar, rcond=None)[0]
        if not np.all(np.isfinite(step)) or grad @ step >= 0:
            logger.debug('No Gauss-Newton descent direction at iteration %s, taking a gradient step', iterations)
            step = -grad
        step_norm = float(np.linalg.norm(step))
        if step_norm <= config.step_tol * scale:
            termination = 'step'
            break

        slope = float(grad @ step)
        t = 1.0
        while True:
            candidate = theta + t * step
            g_candidate = moment_mean(candidate)
            obj_candidate = objective(g_candidate)
            if np.isfinite(obj_candidate) and obj_candidate <= obj + ARMIJO_C * t * slope:
                break
            t *= SHRINK
            if t * step_norm <= config.step_tol * scale:
                candidate = None
                break
        iterations += 1
        if candidate is None:
            termination = 'step'
            break
        theta, gbar, obj = candidate, g_candidate, obj_candidate

    if termination is None or (just_identified and float(np.linalg.norm(gbar)) > config.grad_tol):
        raise GmmConvergenceError(theta, grad_norm, iterations)

    M_hat = Sigma_hat = None
    if geometry:
        M_hat = np.einsum('i,ijk->jk', w, model.jacobian_theta(data, mu, theta)) / n
        Sigma_hat = sandwich_sigma(M_hat, weight)
    return GmmSolution(theta_hat=theta, objective_value=obj, moment_avg=gbar, M_hat=M_hat, Sigma_hat=Sigma_hat,
                       converged=True, iterations=iterations, termination=termination, grad_norm=grad_norm)


@dataclass(frozen=True)
class JacobianReport:
    """Largest deviations of the analytic derivatives from central differences,
    each measured as |analytic − fd| / (1 + |fd|)."""

    jac_theta: float
    deriv_mu: float
    deriv_mu2: Optional[float]
    worst_callback: str
    worst_location: tuple[int, ...]
    tolerance: float = JACOBIAN_TOLERANCE

    @property
    def max_deviation(self) -> float:
        return max(d for d in (self.jac_theta, self.deriv_mu, self.deriv_mu2) if d is not None)

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance

    def __str__(self):
        status = 'passed' if self.passed else 'FAILED'
        return (f'Jacobian check {status}: max deviation {self.max_deviation:.3e} in {self.worst_callback} '
                f'at {self.worst_location} (tolerance {self.tolerance:g})')


def _deviation(analytic: np.ndarray, numeric: np.ndarray) -> tuple[float, tuple[int, ...]]:
    dev = np.abs(analytic - numeric) / (1.0 + np.abs(numeric))
    where = np.unravel_index(int(np.argmax(dev)), dev.shape)
    return float(dev[where]), tuple(int(i) for i in where)


def check_jacobian(model: MomentModel, data: Dataset, mu: np.ndarray, theta: np.ndarray,
                   tolerance: float = JACOBIAN_TOLERANCE) -> JacobianReport:
    """Compares ``jacobian_theta``, ``deriv_mu`` and, when provided,
    ``deriv_mu2`` with central finite differences at every row of ``data``.

    Locations are (observation, moment) for μ-derivatives and
    (observation, moment, parameter) for the θ-Jacobian."""
    mu = np.asarray(mu, dtype=float)
    theta = np.asarray(theta, dtype=float)

    analytic = np.asarray(model.jacobian_theta(data, mu, theta))
    numeric = np.empty_like(analytic, dtype=float)
    for j in range(model.dim_theta):
        h = FD_STEP * (1.0 + abs(theta[j]))
        e = np.zeros_like(theta)
        e[j] = h
        numeric[:, :, j] = (model.moments(data, mu, theta + e) - model.moments(data, mu, theta - e)) / (2 * h)
    results = {'jacobian_theta': _deviation(analytic, numeric)}

    h_mu = FD_STEP * (1.0 + np.abs(mu))[:, None]
    numeric_mu = (model.moments(data, mu + h_mu[:, 0], theta) - model.moments(data, mu - h_mu[:, 0], theta)) / (2 * h_mu)
    results['deriv_mu'] = _deviation(np.asarray(model.deriv_mu(data, mu, theta)), numeric_mu)

    if model.has_deriv_mu2:
        numeric_mu2 = (model.deriv_mu(data, mu + h_mu[:, 0], theta)
                       - model.deriv_mu(data, mu - h_mu[:, 0], theta)) / (2 * h_mu)
        results['deriv_mu2'] = _deviation(np.asarray(model.deriv_mu2(data, mu, theta)), numeric_mu2)

    worst = max(results, key=lambda name: results[name][0])
    report = JacobianReport(jac_theta=results['jacobian_theta'][0], deriv_mu=results['deriv_mu'][0],
                            deriv_mu2=results['deriv_mu2'][0] if 'deriv_mu2' in results else None,
                            worst_callback=worst, worst_location=results[worst][1], tolerance=tolerance)
    if not report.passed:
        logger.warning('%s', report)
    return report
