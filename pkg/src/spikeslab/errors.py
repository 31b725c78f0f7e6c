"""Exception hierarchy shared by the sampler modules and the command line."""


class SpikeSlabError(Exception):
    """Base class for all errors raised by this package."""


class ParameterDomainError(SpikeSlabError, ValueError):
    """A distribution parameter lies outside its domain."""


class ConfigError(SpikeSlabError, ValueError):
    """Invalid hyperparameters or run configuration."""


class DataError(SpikeSlabError, ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(SpikeSlabError, ArithmeticError):
    """A numerical routine failed (non-finite values, lost definiteness)."""


class FactorizationError(NumericalError):
    """Cholesky factorization failed.

    Attributes
    ----------
    pivot : int
        0-based index of the leading minor that was not positive definite.
    """

    def __init__(self, pivot, message=None):
        self.pivot = pivot
        super().__init__(message or f"matrix not positive definite at pivot {pivot}")


class StateError(NumericalError):
    """Sampler state became invalid (non-finite likelihood, bad weights)."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)


class DimensionError(SpikeSlabError, ValueError):
    """Array shapes do not conform."""
