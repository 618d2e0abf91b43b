from __future__ import annotations

import sys

from typing import TYPE_CHECKING

import numpy as np

from twostep import MteModel, MteOptions, PolynomialOutcome, estimate_mte
from utils.commandbase import DataCommand
from utils.plot import plot_mte_curve, write_preview
from utils.workers import available_workers

if TYPE_CHECKING:
    from argparse import ArgumentParser, Namespace
    from jackstep import Jackstep


class MteCurve(DataCommand, name='mte-curve'):
    """Estimate the marginal treatment effect curve on a grid of propensity
    values, with and without the jackknife correction."""

    summary = 'MTE curve with corrected estimates and confidence bands'
    default_moment = None

    def add_arguments(self, parser: ArgumentParser):
        super().add_arguments(parser)
        self.add_inference_arguments(parser)
        parser.add_argument('--degree', type=int, default=2, help='polynomial degree in the propensity')
        parser.add_argument('--interact-degree', type=int, default=1,
                            help='highest propensity power interacted with the covariates')
        parser.add_argument('--clamp', action='store_true', help='clip fitted propensities to [0, 1]')
        parser.add_argument('--x-at', help='comma separated covariate point, default the sample mean')
        parser.add_argument('--out', required=True, help='CSV with columns a, tau_hat, tau_bc, ci_lo, ci_hi')
        parser.add_argument('--svg', help='write the curve as SVG')
        parser.add_argument('--preview', help='write a thumbnail raster preview (.webp or .png)')

    def invoke(self, args: Namespace) -> int:
        data = self.load_dataset(args)
        n_covariates = data.y.shape[1] - 1
        model = MteModel(PolynomialOutcome(args.degree, n_covariates, args.interact_degree), clamp=args.clamp)
        x_point = None if args.x_at is None else np.array([float(v) for v in args.x_at.split(',')])
        options = MteOptions(x_point=x_point, bootstrap=self.setting(args, 'bootstrap'),
                             weights=self.setting(args, 'weights'), alpha=self.setting(args, 'alpha'),
                             seed=self.setting(args, 'seed'), workers=self.setting(args, 'workers') or available_workers())
        estimate = estimate_mte(data, model, options)

        estimate.to_frame().to_csv(args.out, index=False, float_format='%.10g', lineterminator='\n')
        self.log.info('Wrote %s', args.out)
        if args.svg:
            plot_mte_curve(estimate, args.svg)
        if args.preview:
            write_preview(estimate, args.preview, 'png' if args.preview.lower().endswith('.png') else 'webp')

        sys.stdout.write(f'ATE over the grid {estimate.ate:+.6f}, jackknife corrected {estimate.ate_bc:+.6f}\n'
                         f'{estimate.out_of_range} fitted propensities outside [0, 1]\n')
        return 0


def setup(app: Jackstep):
    app.add_command(MteCurve(app))
