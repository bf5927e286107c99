"""Exception hierarchy shared by every epical module."""


class EpicalError(Exception):
    """Base class for all package errors."""


class DegenerateState(EpicalError, ArithmeticError):
    """A SIR step would drive a compartment below zero."""


class NonpositiveMean(EpicalError, ArithmeticError):
    """A Poisson mean came out as zero or negative."""


class FactorizationFailure(EpicalError, ArithmeticError):
    """Cholesky factorization of a correlation matrix failed."""


class DimensionMismatch(EpicalError, ValueError):
    pass


class DomainError(EpicalError, ValueError):
    pass


class EmptyDraws(EpicalError, ValueError):
    pass


class ZeroVariance(EpicalError, ArithmeticError):
    """The function under analysis is constant under the factor distribution."""


class DataError(EpicalError, ValueError):
    """Base class for input-data problems (CLI exit code 2)."""


class ParseError(DataError):
    pass


class DateGapError(DataError):
    pass


class NegativePopulation(DataError):
    pass


class ShiftTooLarge(DataError):
    pass


class ConstantColumn(DataError):
    pass


class HorizonMismatch(DataError):
    pass


class MissingArtifact(DataError):
    pass


class SamplerError(EpicalError, RuntimeError):
    """Fatal numerical failure inside the sampler, tagged with its iteration."""

    def __init__(self, iteration, cause):
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"iteration {iteration}: {cause!r}")


class ConfigError(EpicalError, ValueError):
    """An invalid run setting (CLI exit code 1)."""
