from __future__ import annotations

import logging
import os

from configparser import ConfigParser, Error as ConfigParserError
from dataclasses import dataclass, fields
from typing import TYPE_CHECKING

from twostep.errors import ConfigurationError, SimulationSpecError
from twostep.simulate import SimulationSpec
from .checks import is_positive_int, is_probability
from .utils import parse_int_list
from .workers import available_workers

if TYPE_CHECKING:
    from os import PathLike
    from typing import Mapping, Optional

logger = logging.getLogger(__name__)

CONFIG_PATH = 'data/config.ini'
ENV_PREFIX = 'JACKSTEP_'


def get_env(name: str, environ: Mapping[str, str] = os.environ) -> Optional[str]:
    """Reads ``name`` from the environment, falling back to the first line of
    the file named by ``name_FILE``. Returns None when neither is set."""
    contents = environ.get(name)
    if contents is None:
        contents_file = environ.get(name + '_FILE')
        if contents_file:
            try:
                with open(contents_file, 'r', encoding='utf-8') as f:
                    contents = f.readline().strip()
            except FileNotFoundError:
                raise ConfigurationError(f"Couldn't find {contents_file} (env {name}_FILE).")
            except IsADirectoryError:
                raise ConfigurationError(f'Attempted to open {contents_file} (env {name}_FILE) but it is a folder.')
    return contents


@dataclass(frozen=True)
class Settings:
    """Run defaults shared by every command. Command line flags override them."""

    workers: int = 0
    seed: int = 0
    bootstrap: int = 500
    alpha: float = 0.05
    weights: str = 'rademacher'
    log_level: str = 'INFO'
    cache_hat_max_n: int = 4000

    def __post_init__(self):
        # 0 means one worker per available core
        if self.workers == 0:
            object.__setattr__(self, 'workers', available_workers())
        if not is_positive_int(self.workers):
            raise ConfigurationError(f'workers must be a positive integer, got {self.workers}.')
        if self.seed < 0:
            raise ConfigurationError(f'seed must be non-negative, got {self.seed}.')
        if self.bootstrap < 0:
            raise ConfigurationError(f'bootstrap must be non-negative, got {self.bootstrap}.')
        if not is_probability(self.alpha, open_interval=True):
            raise ConfigurationError(f'alpha must lie in (0, 1), got {self.alpha}.')
        if logging.getLevelName(self.log_level.upper()) not in (logging.DEBUG, logging.INFO, logging.WARNING,
                                                                logging.ERROR, logging.CRITICAL):
            raise ConfigurationError(f'Unknown log_level {self.log_level}.')

    @classmethod
    def load(cls, path: str | PathLike = CONFIG_PATH, environ: Mapping[str, str] = os.environ) -> Settings:
        """Defaults, then the ``[Main]`` section of ``path``, then ``JACKSTEP_*`` variables."""
        raw: dict[str, str] = {}
        config = ConfigParser()
        try:
            read = config.read(path, encoding='utf-8')
        except ConfigParserError as e:
            raise ConfigurationError(f'Could not parse {path}: {e}')
        if read and config.has_section('Main'):
            raw.update(config['Main'])
        elif not read:
            logger.debug('No config file at %s, using defaults', path)

        for f in fields(cls):
            value = get_env(ENV_PREFIX + f.name.upper(), environ)
            if value is not None:
                raw[f.name] = value

        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            logger.warning('Ignoring unknown settings: %s', ', '.join(sorted(unknown)))
        values = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            kind = type(f.default)
            try:
                values[f.name] = kind(raw[f.name])
            except ValueError:
                raise ConfigurationError(f'Setting {f.name} must be {kind.__name__}, got {raw[f.name]!r}.')
        return cls(**values)


SIMULATION_KEYS = {
    'n': int,
    'k_grid': parse_int_list,
    'reps': int,
    'bootstrap_b': int,
    'weights': str,
    'seed': int,
    'eval_a': float,
    'mode': str,
    'oracle': None,
    'alpha': float,
}


def load_simulation_spec(path: Optional[str | PathLike] = None, preset: Optional[str] = None,
                         **overrides) -> SimulationSpec:
    """Builds a SimulationSpec from a preset, a ``[Simulation]`` section and keyword overrides, in that order."""
    if path is None and preset is None:
        raise ConfigurationError('Give a simulation config file or a preset.')
    values: dict = {}
    if preset is not None:
        values.update(vars(SimulationSpec.preset(preset)))
    if path is not None:
        config = ConfigParser()
        try:
            if not config.read(path, encoding='utf-8'):
                raise ConfigurationError(f"Couldn't find simulation config {path}.")
        except ConfigParserError as e:
            raise SimulationSpecError(f'Could not parse {path}: {e}')
        if not config.has_section('Simulation'):
            raise SimulationSpecError(f'{path} has no [Simulation] section.')
        section = config['Simulation']
        for key in section:
            if key not in SIMULATION_KEYS:
                raise SimulationSpecError(f"Unknown simulation key '{key}' in {path}.")
            try:
                value = section.getboolean(key) if key == 'oracle' else SIMULATION_KEYS[key](section[key])
            except ValueError as e:
                raise SimulationSpecError(f"Bad value for '{key}' in {path}: {e}")
            values['bootstrap_B' if key == 'bootstrap_b' else key] = value
    values.update({k: v for k, v in overrides.items() if v is not None})
    missing = {'n', 'k_grid', 'reps'} - set(values)
    if missing:
        raise SimulationSpecError(f"Simulation config is missing {', '.join(sorted(missing))}.")
    return SimulationSpec(**values)
