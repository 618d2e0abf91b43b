from __future__ import annotations

import logging

from io import BytesIO
from typing import TYPE_CHECKING

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

from PIL import Image  # noqa: E402

if TYPE_CHECKING:
    from os import PathLike
    from twostep import MteEstimate

logger = logging.getLogger(__name__)

FIGSIZE = (6.4, 4.0)
MAX_SIZE = (800, 600)
# fixed salt and no date keep SVG output byte-identical between runs
STYLE = {
    'svg.hashsalt': 'jackstep',
    'svg.fonttype': 'none',
    'font.size': 10,
    'axes.grid': True,
    'grid.alpha': 0.3,
}


def _draw_curve(estimate: MteEstimate):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    grid = estimate.grid
    if estimate.ci_lower is not None:
        ax.fill_between(grid, estimate.ci_lower, estimate.ci_upper, color='tab:blue', alpha=0.2, linewidth=0,
                        label=f'{estimate.interval_method} band')
    ax.plot(grid, estimate.tau_hat, color='tab:gray', linestyle='--', label='MTE')
    if estimate.tau_bc is not None:
        ax.plot(grid, estimate.tau_bc, color='tab:blue', label='MTE, jackknife corrected')
    ax.set_xlim(0, 1)
    ax.set_xlabel('a (unobserved resistance)')
    ax.set_ylabel('tau(a | x)')
    ax.legend(loc='best')
    fig.tight_layout()
    return fig


def plot_mte_curve(estimate: MteEstimate, path: str | PathLike):
    with matplotlib.rc_context(STYLE):
        fig = _draw_curve(estimate)
        try:
            fig.savefig(path, format='svg', metadata={'Date': None})
        finally:
            plt.close(fig)
    logger.info('Wrote %s', path)


def write_preview(estimate: MteEstimate, path: str | PathLike, fmt: str = 'webp'):
    """Raster thumbnail of the curve, no larger than MAX_SIZE."""
    with matplotlib.rc_context(STYLE):
        fig = _draw_curve(estimate)
        buffer = BytesIO()
        try:
            fig.savefig(buffer, format='png', dpi=150)
        finally:
            plt.close(fig)
    buffer.seek(0)
    img_obj = Image.open(buffer)
    img_obj.thumbnail(MAX_SIZE)
    if fmt == 'webp':
        img_obj.save(path, 'webp', lossless=False, quality=80)
    else:
        img_obj.save(path, fmt)
    logger.info('Wrote %s (%sx%s)', path, *img_obj.size)
    return img_obj.size
