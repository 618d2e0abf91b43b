#!/usr/bin/env python3

# Jackstep: two-step estimation with jackknife bias correction
# license: Apache License 2.0

import argparse
import importlib
import logging
import os
import sys
import traceback

from typing import Optional, Sequence

from twostep import __version__
from twostep.errors import ConfigurationError, DataIngestionError, TwoStepError
from utils.commandbase import BaseCommand
from utils.configuration import CONFIG_PATH, Settings

cogs = (
    'cogs.estimate',
    'cogs.mte_curve',
    'cogs.simulate',
    'cogs.diagnostics',
)


def setup_logging(level: str = 'INFO'):
    log = logging.getLogger()
    log.setLevel(level.upper())
    fmt = logging.Formatter('[{asctime}] [{levelname:^7s}] {name}.{funcName}: {message}', datefmt="%Y-%m-%d %H:%M:%S",
                            style='{')
    sh = logging.StreamHandler()
    sh.setFormatter(fmt)
    log.handlers = [sh]
    logging.getLogger('matplotlib').setLevel(logging.WARNING)
    logging.getLogger('PIL').setLevel(logging.WARNING)


logger = logging.getLogger(__name__)


class JackstepParser(argparse.ArgumentParser):
    """Usage errors become ConfigurationError so they map to exit code 1."""

    def error(self, message):
        raise ConfigurationError(f'{self.prog}: {message}')


class Jackstep:

    def __init__(self, settings: Settings):
        self.settings = settings
        self.parser = JackstepParser(prog='jackstep', description='Two-step estimation with many first-step '
                                                                  'covariates: jackknife bias correction and '
                                                                  'bootstrap percentile-t inference.')
        self.parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
        self.parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
        self.subparsers = self.parser.add_subparsers(title='commands', dest='command_name', required=True,
                                                     parser_class=JackstepParser)
        self.commands: dict[str, BaseCommand] = {}
        self.failed_cogs = []

    def load_cogs(self):
        for extension in cogs:
            try:
                module = importlib.import_module(extension)
                module.setup(self)
            except Exception as e:
                logger.error("%s failed to load.", extension)
                self.failed_cogs.append((extension, type(e).__name__, e))

    def add_command(self, command: BaseCommand):
        command.register(self.subparsers)
        self.commands[command.name] = command

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        command = None
        try:
            args = self.parser.parse_args(argv)
            if args.verbose:
                logging.getLogger().setLevel(logging.DEBUG)
            command = args.command
            return command.invoke(args)
        except (Exception, KeyboardInterrupt) as exc:
            return self.on_command_error(command, exc)

    def on_command_error(self, command: Optional[BaseCommand], exc: Exception) -> int:
        name = command.name if command else 'jackstep'

        if isinstance(exc, ConfigurationError):
            logger.error('%s: %s', name, exc)
            if command is None:
                self.parser.print_usage(sys.stderr)

        elif isinstance(exc, DataIngestionError):
            logger.error('%s: bad input data: %s', name, exc)

        elif isinstance(exc, TwoStepError):
            logger.error('%s: %s failed: %s', name, type(exc).__name__, exc)

        elif isinstance(exc, (FileNotFoundError, IsADirectoryError, PermissionError)):
            logger.error('%s: %s', name, exc)
            return 1

        elif isinstance(exc, KeyboardInterrupt):
            logger.error('%s interrupted', name)
            return 130

        else:
            logger.error('Unexpected exception in %s:\n%s', name, ''.join(traceback.format_exception(exc)))
            return 3

        return exc.exit_code


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging()
    try:
        settings = Settings.load(os.environ.get('JACKSTEP_CONFIG', CONFIG_PATH))
    except ConfigurationError as e:
        logger.error('Could not load settings: %s', e)
        return e.exit_code
    setup_logging(settings.log_level)
    app = Jackstep(settings)
    app.load_cogs()
    if app.failed_cogs:
        logger.warning('Commands unavailable: %s', ', '.join(f'{cog} ({exc_type})' for cog, exc_type, _ in app.failed_cogs))
    return app.run(argv)


if __name__ == '__main__':
    sys.exit(main())
