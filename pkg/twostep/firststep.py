"""Least-squares first step: fitting, hat-matrix queries and leave-one-out updates."""
from __future__ import annotations

import logging
import math
import operator
import re

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
import pandas as pd
import scipy.linalg

from .errors import (DataIngestionError, DeletionSingularityError, MissingColumnError,
                     ObservationIndexError)
from utils.checks import closest_match

if TYPE_CHECKING:
    from os import PathLike
    from typing import Optional, Sequence

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-12
SINGULAR_LEVERAGE_GAP = 1e-10
BALANCE_ADVISORY_RATIO = 0.3
CACHE_HAT_MAX_N = 4000


def _freeze(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _first_bad_row(block: np.ndarray) -> int:
    bad = ~np.isfinite(block)
    if block.ndim > 1:
        bad = bad.any(axis=1)
    return int(np.flatnonzero(bad)[0])


@dataclass(frozen=True)
class Dataset:
    """The observed sample: outcome block ``y`` (n x d_y), first-step response
    ``r`` (n) and first-step covariates ``z`` (n x k)."""

    y: np.ndarray
    r: np.ndarray
    z: np.ndarray
    y_names: tuple[str, ...] = ()
    z_names: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        r = np.array(self.r, dtype=float)
        z = np.array(self.z, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if r.ndim == 2 and r.shape[1] == 1:
            r = r[:, 0]
        if z.ndim == 1:
            z = z[:, None]
        if y.ndim != 2 or r.ndim != 1 or z.ndim != 2:
            raise DataIngestionError('y and z must be matrices and r a vector.')
        n = r.shape[0]
        if y.shape[0] != n or z.shape[0] != n:
            raise DataIngestionError(f'Blocks have mismatched rows: y {y.shape[0]}, r {n}, z {z.shape[0]}.')
        if n < 2:
            raise DataIngestionError(f'At least 2 observations are required, got {n}.')
        if z.shape[1] < 1:
            raise DataIngestionError('At least one first-step covariate is required.')
        for name, block in (('y', y), ('r', r), ('z', z)):
            if not np.isfinite(block).all():
                raise DataIngestionError(f'Non-finite value in block {name} at row {_first_bad_row(block)}.')
        object.__setattr__(self, 'y', _freeze(y))
        object.__setattr__(self, 'r', _freeze(r))
        object.__setattr__(self, 'z', _freeze(z))

    @property
    def n(self) -> int:
        return self.r.shape[0]

    @property
    def k(self) -> int:
        return self.z.shape[1]

    def first_covariates(self, k: int) -> Dataset:
        """The same sample restricted to the first ``k`` covariate columns."""
        if not 1 <= k <= self.k:
            raise DataIngestionError(f'Cannot keep {k} of {self.k} covariates.')
        return replace(self, z=self.z[:, :k], z_names=self.z_names[:k])

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, *, y_cols: Sequence[str], r_col: str, z_cols: Sequence[str],
                   add_intercept: bool = False) -> Dataset:
        header = [str(c) for c in frame.columns]
        for column in (*y_cols, r_col, *z_cols):
            if column not in header:
                raise MissingColumnError(column, header, closest_match(column, header))

        def numeric(columns: Sequence[str]) -> np.ndarray:
            block = frame[list(columns)].apply(pd.to_numeric, errors='coerce').to_numpy(dtype=float)
            if not np.isfinite(block).all():
                row = _first_bad_row(block)
                col = columns[int(np.flatnonzero(~np.isfinite(block[row]))[0])]
                # header is line 1
                raise DataIngestionError(f"Missing or non-numeric value in column '{col}'.", line=row + 2)
            return block

        y = numeric(y_cols)
        r = numeric([r_col])[:, 0]
        z = numeric(z_cols)
        z_names = tuple(z_cols)
        if add_intercept:
            z = np.column_stack([np.ones(len(r)), z])
            z_names = ('const',) + z_names
        return cls(y=y, r=r, z=z, y_names=tuple(y_cols), z_names=z_names)

    @classmethod
    def from_csv(cls, path: str | PathLike, *, y_cols: Sequence[str], r_col: str, z_cols: Sequence[str],
                 add_intercept: bool = False) -> Dataset:
        """Read a sample from a CSV file with a header row."""
        try:
            frame = pd.read_csv(path)
        except FileNotFoundError:
            raise DataIngestionError(f"Couldn't find data file {path}.")
        except IsADirectoryError:
            raise DataIngestionError(f'Attempted to open {path} but it is a folder.')
        except pd.errors.EmptyDataError:
            raise DataIngestionError(f'Data file {path} is empty.')
        except pd.errors.ParserError as e:
            match = re.search(r'line (\d+)', str(e))
            raise DataIngestionError(f'Could not parse {path}: {e}', line=int(match.group(1)) if match else None)
        logger.debug('Read %s rows and %s columns from %s', len(frame), len(frame.columns), path)
        return cls.from_frame(frame, y_cols=y_cols, r_col=r_col, z_cols=z_cols, add_intercept=add_intercept)


@dataclass(frozen=True)
class FirstStepFit:
    """Least-squares fit of r on Z.

    The projection Π = Z(Z'Z)⁻Z' is never formed unless requested with
    :meth:`cache_hat_matrix`; ``basis`` holds an orthonormal basis of the
    column space of Z, so that Π = basis @ basis.T."""

    beta_hat: np.ndarray
    mu_hat: np.ndarray
    leverage: np.ndarray
    rank: int
    basis: np.ndarray = field(repr=False)
    pivots: np.ndarray = field(repr=False)
    hat: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def k(self) -> int:
        return self.beta_hat.shape[0]

    def project(self, v: np.ndarray) -> np.ndarray:
        """Apply Π to a vector or to each column of an n x m matrix."""
        v = np.asarray(v, dtype=float)
        if self.hat is not None:
            return self.hat @ v
        return self.basis @ (self.basis.T @ v)

    def cache_hat_matrix(self, max_n: int = CACHE_HAT_MAX_N) -> FirstStepFit:
        if self.hat is not None:
            return self
        if self.n > max_n:
            logger.info('Not caching the %sx%s hat matrix (limit %s).', self.n, self.n, max_n)
            return self
        return replace(self, hat=_freeze(self.basis @ self.basis.T))


def fit_least_squares(data: Dataset) -> FirstStepFit:
    """Regress r on Z with a column-pivoted QR factorization.

    Rank-deficient designs get the minimum-norm coefficient vector through a
    second QR of the retained triangular block (complete orthogonal
    decomposition)."""
    z, r = data.z, data.r
    n, k = z.shape
    if k > n:
        logger.warning('More covariates than observations (k=%s, n=%s).', k, n)

    q, r_factor, pivots = scipy.linalg.qr(z, mode='economic', pivoting=True)
    diag = np.abs(np.diag(r_factor))
    tol = RANK_TOLERANCE * (np.linalg.norm(z, 2) if z.size else 0.0) * max(n, k)
    rank = int(np.count_nonzero(diag > tol))
    basis = np.ascontiguousarray(q[:, :rank])
    coords = basis.T @ r

    beta = np.zeros(k)
    if rank:
        r1 = r_factor[:rank, :]
        if rank == k:
            solution = scipy.linalg.solve_triangular(r1, coords)
        else:
            q2, r2 = scipy.linalg.qr(r1.T, mode='economic')
            solution = q2 @ scipy.linalg.solve_triangular(r2, coords, trans='T')
        beta[pivots] = solution
    if rank < min(n, k):
        logger.debug('Design has rank %s < min(n, k) = %s.', rank, min(n, k))

    mu = basis @ coords
    leverage = np.clip(np.einsum('ij,ij->i', basis, basis), 0.0, 1.0)
    return FirstStepFit(beta_hat=_freeze(beta), mu_hat=_freeze(mu), leverage=_freeze(leverage), rank=rank,
                        basis=_freeze(basis), pivots=_freeze(pivots))


def _check_index(ell: int, n: int) -> int:
    ell = operator.index(ell)
    if not 0 <= ell < n:
        raise ObservationIndexError(ell, n)
    return ell


def hat_column(fit: FirstStepFit, ell: int) -> np.ndarray:
    """Column ``ell`` of Π, {π_iℓ} for i = 0..n-1, in O(n·k)."""
    ell = _check_index(ell, fit.n)
    if fit.hat is not None:
        return fit.hat[:, ell].copy()
    return fit.basis @ fit.basis[ell]


def loo_mu(fit: FirstStepFit, r: np.ndarray, ell: int, mu: Optional[np.ndarray] = None) -> np.ndarray:
    """Fitted values of the least-squares fit without observation ``ell``,
    evaluated at all n covariate rows.

    ``r`` may be any response regressed on the stored design (the wild
    bootstrap passes r*); ``mu`` is Π r when already known."""
    ell = _check_index(ell, fit.n)
    gap = 1.0 - fit.leverage[ell]
    if gap < SINGULAR_LEVERAGE_GAP:
        raise DeletionSingularityError(ell, float(fit.leverage[ell]))
    r = np.asarray(r, dtype=float)
    if mu is None:
        mu = fit.project(r)
    return mu + (mu[ell] - r[ell]) / gap * hat_column(fit, ell)


class BalanceDiagnostics(NamedTuple):
    sum_sq_leverage: float
    max_leverage: float
    max_inv_gap: float
    k_ratio: float
    singular: bool
    k_exceeds_n: bool

    @property
    def advisory(self) -> bool:
        """True when k/√n is large enough for the many-covariates bias to matter."""
        return self.k_ratio >= BALANCE_ADVISORY_RATIO


def design_balance(fit: FirstStepFit) -> BalanceDiagnostics:
    lev = fit.leverage
    gap = 1.0 - lev
    singular = bool(np.any(gap < SINGULAR_LEVERAGE_GAP))
    diagnostics = BalanceDiagnostics(
        sum_sq_leverage=float(np.sum(lev ** 2)),
        max_leverage=float(np.max(lev)),
        max_inv_gap=math.inf if singular else float(np.max(1.0 / gap)),
        k_ratio=fit.k / math.sqrt(fit.n),
        singular=singular,
        k_exceeds_n=fit.k > fit.n,
    )
    if diagnostics.advisory:
        logger.warning('k/sqrt(n) = %.3f >= %s: expect a many-covariates bias, use the jackknife correction.',
                       diagnostics.k_ratio, BALANCE_ADVISORY_RATIO)
    if singular:
        logger.warning('Some observations have leverage one; the jackknife is undefined for them.')
    return diagnostics
