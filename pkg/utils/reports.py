"""Report emission: the versioned JSON inference report and plain-text summaries."""
from __future__ import annotations

import json
import logging

from pathlib import Path
from typing import TYPE_CHECKING

from .utils import format_vector

if TYPE_CHECKING:
    from os import PathLike
    from typing import Iterable
    from twostep import BalanceDiagnostics, InferenceReport, Interval, JacobianReport, JackknifeResult

logger = logging.getLogger(__name__)


def report_json(report: InferenceReport) -> str:
    # float repr round-trips, so equal reports give equal bytes
    return json.dumps(report.to_dict(), indent=2, allow_nan=True) + '\n'


def write_text(path: str | PathLike, text: str):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    path.write_text(text, encoding='utf-8', newline='\n')
    logger.info('Wrote %s', path)


def write_report(report: InferenceReport, path: str | PathLike):
    write_text(path, report_json(report))


def format_balance(diagnostics: BalanceDiagnostics, n: int, k: int) -> str:
    lines = [
        'Design balance',
        f'  n = {n}, k = {k}, k/sqrt(n) = {diagnostics.k_ratio:.4f}',
        f'  sum of squared leverages  {diagnostics.sum_sq_leverage:.6g}',
        f'  max leverage              {diagnostics.max_leverage:.6g}',
        f'  max 1/(1 - leverage)      {diagnostics.max_inv_gap:.6g}' + (' (singular)' if diagnostics.singular else ''),
    ]
    if diagnostics.k_exceeds_n:
        lines.append('  warning: more covariates than observations')
    if diagnostics.advisory:
        lines.append('  advisory: k/sqrt(n) >= 0.3, the many-covariates bias is likely to matter; '
                     'use the jackknife-corrected estimates')
    return '\n'.join(lines) + '\n'


def format_intervals(intervals: Iterable[Interval]) -> str:
    lines = []
    for i in intervals:
        lines.append(f'  {i.name:<12s} estimate {i.estimate:+.6f}  corrected {i.corrected:+.6f}  '
                     f'se {i.std_error:.6f}  {100 * (1 - i.alpha):g}% [{i.lower:+.6f}, {i.upper:+.6f}] ({i.method})')
    return '\n'.join(lines) + '\n'


def format_summary(jackknife: JackknifeResult, report: InferenceReport, diagnostics: BalanceDiagnostics,
                   n: int, k: int) -> str:
    parts = [
        'Two-step estimate',
        f'  theta_hat            {format_vector(jackknife.theta_hat)}',
        f'  jackknife bias       {format_vector(jackknife.bias_hat)}',
        f'  theta_hat - bias     {format_vector(jackknife.theta_corrected)}',
        '',
    ]
    if report.n_draws:
        parts.append(f'Percentile-t intervals from {report.n_draws} bootstrap draws '
                     f'({report.weights} weights, seed {report.seed}, {report.failures} failed)')
    else:
        parts.append('Normal-approximation intervals from the jackknife variance (no bootstrap)')
    return '\n'.join(parts) + '\n' + format_intervals(report.intervals.values()) + '\n' + format_balance(diagnostics, n, k)


def format_jacobian(report: JacobianReport) -> str:
    lines = [
        'Moment derivative check (central differences)',
        f'  d m / d theta   {report.jac_theta:.3e}',
        f'  d m / d mu      {report.deriv_mu:.3e}',
    ]
    if report.deriv_mu2 is not None:
        lines.append(f'  d2 m / d mu2    {report.deriv_mu2:.3e}')
    lines.append(f'  {report}')
    return '\n'.join(lines) + '\n'
