from .errors import (TwoStepError, ConfigurationError, SimulationSpecError, DataIngestionError, MissingColumnError,
                     TreatmentCodingError, ObservationIndexError, DeletionSingularityError, GmmConvergenceError,
                     RankDeficiencyError, JackknifeError, WeightDistributionError, BootstrapFailureError,
                     EmptyDrawError, OracleInputError)
from .firststep import BalanceDiagnostics, Dataset, FirstStepFit, design_balance, fit_least_squares, hat_column, loo_mu
from .gmm import (GmmConfig, GmmSolution, JacobianReport, MomentModel, SampleMean, check_jacobian, sandwich_sigma,
                  solve_gmm)
from .jackknife import (CorrectionMethod, Functional, FunctionalEstimate, JackknifeResult, bias_correct_functional,
                        jackknife_two_step)
from .bootstrap import (BootstrapDraw, InferenceReport, Interval, WeightDistribution, bootstrap_draw,
                        bootstrap_statistic, draw_weights, empirical_quantile, normal_interval, percentile_t_interval,
                        wild_first_step)
from .mte import (ConditionalMoments, CurvatureForm, MteEstimate, MteModel, MteOptions, OracleTerms, OutcomeSpec,
                  PolynomialOutcome, build_moment_model, estimate_mte, oracle_bias_variance)
from .simulate import SimulationSpec, SimulationTable, generate_dgp, run_monte_carlo

__version__ = '1.0.0'

__all__ = ['TwoStepError', 'ConfigurationError', 'SimulationSpecError', 'DataIngestionError', 'MissingColumnError',
           'TreatmentCodingError', 'ObservationIndexError', 'DeletionSingularityError', 'GmmConvergenceError',
           'RankDeficiencyError', 'JackknifeError', 'WeightDistributionError', 'BootstrapFailureError',
           'EmptyDrawError', 'OracleInputError', 'BalanceDiagnostics', 'Dataset', 'FirstStepFit', 'design_balance',
           'fit_least_squares', 'hat_column', 'loo_mu', 'GmmConfig', 'GmmSolution', 'JacobianReport', 'MomentModel',
           'SampleMean', 'check_jacobian', 'sandwich_sigma', 'solve_gmm', 'CorrectionMethod', 'Functional',
           'FunctionalEstimate', 'JackknifeResult', 'bias_correct_functional', 'jackknife_two_step', 'BootstrapDraw',
           'InferenceReport', 'Interval', 'WeightDistribution', 'bootstrap_draw', 'bootstrap_statistic',
           'draw_weights', 'empirical_quantile', 'normal_interval', 'percentile_t_interval', 'wild_first_step',
           'ConditionalMoments', 'CurvatureForm', 'MteEstimate', 'MteModel', 'MteOptions', 'OracleTerms',
           'OutcomeSpec', 'PolynomialOutcome', 'build_moment_model', 'estimate_mte', 'oracle_bias_variance',
           'SimulationSpec', 'SimulationTable', 'generate_dgp', 'run_monte_carlo']
