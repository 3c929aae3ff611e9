"""
Variational Bayesian Hawkes processes whose triggering kernel is the square of
a sparse Gaussian process.
"""

from .errors import (VBHawkesError, DomainError, ArgumentError, StateError, NumericalFailure, ExplosionError,
                     SelectionError, DataError, ModelFileError, IncompatibleModelError)
from .models import Domain, KernelConfig, Priors, FitConfig, FitReport, EvalConfig, ModelFile, EventSequence
from .special_functions import (EULER_GAMMA, GTildeTable, g_tilde, g_tilde_prime, g_tilde_series,
                                expected_log_square, digamma, log_gamma, erf)
from .kernel_gp import (kernel, gram, InducingGrid, GramFactor, GPContext, posterior_moments, psi_matrix,
                        expected_square_integral)
from .engine import (BranchingPosterior, VariationalState, FitResult, kl_gamma, kl_gaussian_u, e_step, dde, elbo,
                     m_step, fit, approx_log_marginal, predictive_kernel, predictive_mode, background_mode,
                     predictive_table)
from .simulator import (TriggeringKernel, SimConfig, SimulationResult, get_kernel, make_rng, simulate,
                        simulate_clusters, intensity_at)
from .evaluation import (l2_phi, l2_mu, hll, split, grid_select, evaluate_splits, benchmark_fit_time,
                         benchmark_inducing)
from .data_io import load_events, save_events, save_model, load_model, to_model_file, from_model_file
from .cache import Cache

__version__ = "0.1.0"

__all__ = [
    'VBHawkesError', 'DomainError', 'ArgumentError', 'StateError', 'NumericalFailure', 'ExplosionError',
    'SelectionError', 'DataError', 'ModelFileError', 'IncompatibleModelError',
    'Domain', 'KernelConfig', 'Priors', 'FitConfig', 'FitReport', 'EvalConfig', 'ModelFile', 'EventSequence',
    'EULER_GAMMA', 'GTildeTable', 'g_tilde', 'g_tilde_prime', 'g_tilde_series', 'expected_log_square',
    'digamma', 'log_gamma', 'erf',
    'kernel', 'gram', 'InducingGrid', 'GramFactor', 'GPContext', 'posterior_moments', 'psi_matrix',
    'expected_square_integral',
    'BranchingPosterior', 'VariationalState', 'FitResult', 'kl_gamma', 'kl_gaussian_u', 'e_step', 'dde', 'elbo',
    'm_step', 'fit', 'approx_log_marginal', 'predictive_kernel', 'predictive_mode', 'background_mode',
    'predictive_table',
    'TriggeringKernel', 'SimConfig', 'SimulationResult', 'get_kernel', 'make_rng', 'simulate', 'simulate_clusters',
    'intensity_at',
    'l2_phi', 'l2_mu', 'hll', 'split', 'grid_select', 'evaluate_splits', 'benchmark_fit_time',
    'benchmark_inducing',
    'load_events', 'save_events', 'save_model', 'load_model', 'to_model_file', 'from_model_file',
    'Cache',
]
