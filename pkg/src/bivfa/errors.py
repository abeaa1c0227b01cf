"""Exception hierarchy shared by every module of the package."""


class BivfaError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(BivfaError, ValueError):
    """Invalid user-supplied parameter, dimension or file layout."""


class InputDomainError(BivfaError, ValueError):
    """Input values outside the domain of an operator (e.g. NaN, inf)."""


class UnsupportedInstanceError(BivfaError):
    """The instance needs an operator that has no registered closed form."""


class NumericalFailure(BivfaError, ArithmeticError):
    """A solver produced a non-finite iterate or backtracking diverged."""


class TheoryViolationError(BivfaError):
    """A bound that the analysis guarantees was observed to fail.

    This almost always means a tolerance constant (``D``, ``B_f`` or
    ``Delta1``) is miscalibrated for the instance at hand.
    """


class ReferenceUnavailableError(BivfaError):
    """The high-accuracy reference oracle did not reach its tolerance."""
