"""
Exception types raised across the vb_hawkes package.

The CLI maps each family to an exit code (see ``vb_hawkes.cli``).
"""


class VBHawkesError(Exception):
    """Base class for all package errors"""


class DomainError(VBHawkesError, ValueError):
    """Argument outside the mathematical domain of a function"""


class ArgumentError(VBHawkesError, ValueError):
    """Malformed argument: wrong shape, unsorted events, point outside the domain"""


class StateError(VBHawkesError):
    """Variational state is invalid (non-PSD covariance, singular factor, ...)"""


class NumericalFailure(VBHawkesError, ArithmeticError):
    """A computation produced a value that signals broken numerics"""


class ExplosionError(VBHawkesError):
    """Simulation produced more events than the configured cap"""


class SelectionError(VBHawkesError):
    """Every hyperparameter configuration in a grid failed to fit"""


class DataError(VBHawkesError, ValueError):
    """Input data could not be parsed or violates data constraints"""


class ModelFileError(DataError):
    """Model file is truncated or malformed"""


class IncompatibleModelError(ModelFileError):
    """Model file was written by an incompatible format version"""
