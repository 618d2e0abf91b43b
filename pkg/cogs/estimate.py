from __future__ import annotations

import sys

from typing import TYPE_CHECKING

from twostep import (GmmConfig, MteModel, WeightDistribution, bootstrap_statistic, design_balance, fit_least_squares,
                     jackknife_two_step, normal_interval, percentile_t_interval, solve_gmm)
from twostep.bootstrap import empty_report
from twostep.jackknife import Functional
from twostep.mte import check_treatment
from utils.commandbase import DataCommand
from utils.reports import format_summary, write_report, write_text
from utils.workers import available_workers

if TYPE_CHECKING:
    from argparse import ArgumentParser, Namespace
    from jackstep import Jackstep

# MTE summaries always include the effect at the middle of the support
FOCAL_POINT = 0.5


class Estimate(DataCommand, name='estimate'):
    """Fit the two-step estimator, correct its bias with the jackknife and
    build percentile-t intervals with the wild/multiplier bootstrap."""

    summary = 'two-step estimate with jackknife correction and bootstrap intervals'

    def add_arguments(self, parser: ArgumentParser):
        super().add_arguments(parser)
        self.add_inference_arguments(parser)
        parser.add_argument('--out', help='write the JSON inference report here')
        parser.add_argument('--summary', help='write the text summary here instead of stdout')

    def invoke(self, args: Namespace) -> int:
        data = self.load_dataset(args)
        model = self.load_model(args, data)
        B = self.setting(args, 'bootstrap')
        alpha = self.setting(args, 'alpha')
        seed = self.setting(args, 'seed')
        workers = self.setting(args, 'workers') or available_workers()

        fit = fit_least_squares(data).cache_hat_matrix(self.settings.cache_hat_max_n)
        diagnostics = design_balance(fit)
        config = GmmConfig()
        if isinstance(model, MteModel):
            check_treatment(data)
            if model.linear_in_theta:
                config = GmmConfig(theta_init=model.closed_form(data, fit.mu_hat))
        solution = solve_gmm(model, data, fit.mu_hat, config)
        self.log.info('Second step converged in %s iterations (%s)', solution.iterations, solution.termination)
        jackknife = jackknife_two_step(model, data, fit, config, solution=solution, workers=workers)

        functionals = [Functional.coordinate(j) for j in range(model.dim_theta)]
        if isinstance(model, MteModel):
            functionals.append(model.tau_functional(data.y[:, 1:].mean(axis=0), FOCAL_POINT))
        if B:
            dist = WeightDistribution.from_name(self.setting(args, 'weights'))
            report = bootstrap_statistic(model, data, fit, config, jackknife, dist, B, seed, workers=workers)
            for phi in functionals:
                report.add_interval(percentile_t_interval(report, phi, alpha))
        else:
            report = empty_report(jackknife)
            for phi in functionals:
                report.add_interval(normal_interval(jackknife, phi, alpha))

        if args.out:
            write_report(report, args.out)
        text = format_summary(jackknife, report, diagnostics, data.n, data.k)
        if args.summary:
            write_text(args.summary, text)
        else:
            sys.stdout.write(text)
        return 0


def setup(app: Jackstep):
    app.add_command(Estimate(app))
