from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from typing import Optional, Sequence
    import numpy as np


class TwoStepError(Exception):
    """General exception class for the estimation pipeline.

    ``exit_code`` is what the command line surface returns when the error
    reaches it: 1 for usage/config, 2 for data, 3 for numerical failures."""

    exit_code = 3


class ConfigurationError(TwoStepError):
    """Invalid run configuration."""

    exit_code = 1


class SimulationSpecError(ConfigurationError):
    """A Monte Carlo setup is invalid."""


class DataIngestionError(TwoStepError):
    """Input data is malformed: wrong shapes, non-finite values or unparsable files."""

    exit_code = 2

    def __init__(self, message: str, *, line: Optional[int] = None):
        if line is not None:
            message = f'line {line}: {message}'
        super().__init__(message)
        self.line = line


class MissingColumnError(DataIngestionError):
    def __init__(self, column: str, header: Sequence[str], suggestion: Optional[str] = None):
        message = f"Column '{column}' not found in header [{', '.join(header)}]."
        if suggestion:
            message += f" Did you mean '{suggestion}'?"
        super().__init__(message)
        self.column = column
        self.header = list(header)
        self.suggestion = suggestion


class TreatmentCodingError(DataIngestionError):
    """The treatment indicator is not coded in {0, 1}."""


class ObservationIndexError(TwoStepError, IndexError):
    exit_code = 1

    def __init__(self, index: int, n: int):
        super().__init__(f'Observation index {index} out of range for {n} observations.')
        self.index = index
        self.n = n


class DeletionSingularityError(TwoStepError):
    """Deleting the observation leaves its own fitted value undefined (leverage one)."""

    def __init__(self, index: int, leverage: float):
        super().__init__(f'Deleting observation {index} is singular (leverage {leverage:.12g}).')
        self.index = index
        self.leverage = leverage


class GmmConvergenceError(TwoStepError):
    def __init__(self, theta: np.ndarray, grad_norm: float, iterations: int):
        super().__init__(f'Second step did not converge after {iterations} iterations '
                         f'(gradient norm {grad_norm:.3e}).')
        self.theta = theta
        self.grad_norm = grad_norm
        self.iterations = iterations


class RankDeficiencyError(TwoStepError):
    """M'ΩM is singular at the solution."""


class JackknifeError(TwoStepError):
    def __init__(self, failed_deletions: Sequence[int]):
        shown = ', '.join(str(i) for i in failed_deletions[:10])
        more = '' if len(failed_deletions) <= 10 else f' (+{len(failed_deletions) - 10} more)'
        super().__init__(f'{len(failed_deletions)} deletion(s) failed: {shown}{more}')
        self.failed_deletions = list(failed_deletions)


class WeightDistributionError(ConfigurationError):
    def __init__(self, moment: str, value: float, expected: float):
        super().__init__(f'Bootstrap weights violate the {moment} condition: {value:.12g} != {expected:g}.')
        self.moment = moment
        self.value = value
        self.expected = expected


class BootstrapFailureError(TwoStepError):
    def __init__(self, failures: int, draws: int):
        super().__init__(f'{failures} of {draws} bootstrap draws failed (more than 1%).')
        self.failures = failures
        self.draws = draws


class EmptyDrawError(TwoStepError):
    """No bootstrap draws are available to compute quantiles from."""


class OracleInputError(TwoStepError):
    exit_code = 1

    def __init__(self, missing: Sequence[str]):
        super().__init__(f"Oracle needs DGP knowledge that was not supplied: {', '.join(missing)}.")
        self.missing = list(missing)
