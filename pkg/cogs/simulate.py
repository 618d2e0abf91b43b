from __future__ import annotations

import sys

from typing import TYPE_CHECKING

from twostep import run_monte_carlo
from twostep.simulate import PRESETS
from utils.commandbase import BaseCommand
from utils.configuration import load_simulation_spec
from utils.reports import write_text
from utils.workers import available_workers

if TYPE_CHECKING:
    from argparse import ArgumentParser, Namespace
    from jackstep import Jackstep


class Simulate(BaseCommand, name='simulate'):
    """Run the Monte Carlo coverage study and print the results table.

    Exits with status 3 when a row had more than 2% failed replications."""

    summary = 'Monte Carlo coverage study across instrument counts'

    def add_arguments(self, parser: ArgumentParser):
        parser.add_argument('--config', help='file with a [Simulation] section')
        parser.add_argument('--preset', choices=sorted(PRESETS))
        parser.add_argument('--reps', type=int, help='override the replication count')
        parser.add_argument('--seed', type=int, help='override the seed')
        parser.add_argument('--workers', type=int, help='worker processes, 0 for one per core')
        parser.add_argument('--out', help='write the table as CSV here')
        parser.add_argument('--text', help='write the aligned table here instead of stdout')

    def invoke(self, args: Namespace) -> int:
        spec = load_simulation_spec(args.config, args.preset, reps=args.reps, seed=args.seed)
        table = run_monte_carlo(spec, workers=self.setting(args, 'workers') or available_workers())
        if args.out:
            table.to_csv(args.out)
            self.log.info('Wrote %s', args.out)
        if args.text:
            write_text(args.text, table.to_text())
        else:
            sys.stdout.write(table.to_text())
        if table.flagged:
            self.log.error('At least one row had more than 2% failed replications')
            return 3
        return 0


def setup(app: Jackstep):
    app.add_command(Simulate(app))
