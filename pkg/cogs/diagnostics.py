from __future__ import annotations

import sys

from typing import TYPE_CHECKING

from twostep import GmmConfig, MteModel, check_jacobian, design_balance, fit_least_squares, solve_gmm
from utils.commandbase import DataCommand
from utils.reports import format_balance, format_jacobian

if TYPE_CHECKING:
    from argparse import Namespace
    from jackstep import Jackstep


class Diagnostics(DataCommand, name='diagnostics'):
    """Report first-step design balance and check the moment model's
    derivatives against finite differences at the fitted values."""

    summary = 'design balance and derivative checks'

    def invoke(self, args: Namespace) -> int:
        data = self.load_dataset(args)
        model = self.load_model(args, data)
        fit = fit_least_squares(data)
        config = GmmConfig()
        if isinstance(model, MteModel) and model.linear_in_theta:
            config = GmmConfig(theta_init=model.closed_form(data, fit.mu_hat))
        theta = solve_gmm(model, data, fit.mu_hat, config, geometry=False).theta_hat
        report = check_jacobian(model, data, fit.mu_hat, theta)
        sys.stdout.write(format_balance(design_balance(fit), data.n, data.k) + '\n' + format_jacobian(report))
        return 0 if report.passed else 3


def setup(app: Jackstep):
    app.add_command(Diagnostics(app))
