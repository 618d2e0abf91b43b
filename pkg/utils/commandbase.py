from __future__ import annotations

import logging

from typing import TYPE_CHECKING

from twostep import Dataset, build_moment_model
from .utils import parse_columns

if TYPE_CHECKING:
    from argparse import ArgumentParser, Namespace
    from typing import Any, Optional
    from jackstep import Jackstep
    from twostep import MomentModel
    from .configuration import Settings


class BaseCommand:
    """Base class for Jackstep commands.

    Subclasses name themselves with ``class Foo(BaseCommand, name='foo')``,
    add their flags in :meth:`add_arguments` and do the work in :meth:`invoke`,
    which returns the process exit code."""

    name: str
    summary: str = ''

    def __init__(self, app: Jackstep):
        self.app = app
        self.log = logging.getLogger(self.__class__.__name__)
        self.log.debug('Initializing %s', type(self).__name__)

    def __init_subclass__(cls, *, name: Optional[str] = None, **kwargs):
        super().__init_subclass__(**kwargs)
        cls.name = name or cls.__name__.lower()

    @property
    def settings(self) -> Settings:
        return self.app.settings

    def register(self, subparsers) -> ArgumentParser:
        parser = subparsers.add_parser(self.name, help=self.summary, description=self.__doc__)
        self.add_arguments(parser)
        parser.set_defaults(command=self)
        return parser

    def add_arguments(self, parser: ArgumentParser):
        pass

    def invoke(self, args: Namespace) -> int:
        raise NotImplementedError

    def setting(self, args: Namespace, key: str) -> Any:
        """The command line value for ``key`` if given, else the configured one."""
        value = getattr(args, key, None)
        return getattr(self.settings, key) if value is None else value

    @staticmethod
    def add_inference_arguments(parser: ArgumentParser):
        parser.add_argument('--bootstrap', type=int, metavar='B', help='bootstrap draws, 0 for normal intervals')
        parser.add_argument('--alpha', type=float, help='interval level is 1 - alpha')
        parser.add_argument('--weights', choices=('rademacher', 'webb6'), help='bootstrap weight distribution')
        parser.add_argument('--seed', type=int)
        parser.add_argument('--workers', type=int, help='worker processes, 0 for one per core')


class DataCommand(BaseCommand):
    """A command that reads a sample from a CSV file."""

    default_moment = 'mte'

    def add_arguments(self, parser: ArgumentParser):
        parser.add_argument('--data', required=True, help='CSV file with a header row')
        parser.add_argument('--y-cols', default='y', help='outcome columns, e.g. y or y1..y3')
        parser.add_argument('--x-cols', default='', help='second step covariates (MTE models)')
        parser.add_argument('--r-col', required=True, help='first step response (the treatment for MTE)')
        parser.add_argument('--z-cols', required=True, help='first step covariates, e.g. z1..z5')
        parser.add_argument('--add-intercept', action='store_true', help='prepend a constant to the covariates')
        if self.default_moment:
            parser.add_argument('--moment', default=self.default_moment, help='mean, mte or mte-cubic')

    def load_dataset(self, args: Namespace) -> Dataset:
        data = Dataset.from_csv(args.data, y_cols=parse_columns(args.y_cols) + parse_columns(args.x_cols),
                                r_col=args.r_col, z_cols=parse_columns(args.z_cols), add_intercept=args.add_intercept)
        self.log.info('Loaded %s observations with %s first step covariates from %s', data.n, data.k, args.data)
        return data

    def load_model(self, args: Namespace, data: Dataset) -> MomentModel:
        return build_moment_model(args.moment, data)
