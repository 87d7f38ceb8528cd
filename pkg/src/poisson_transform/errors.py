"""Exception hierarchy."""


class PoissonTransformError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(PoissonTransformError, ValueError):
    """A point or parameter lies outside the admissible region."""


class NumericalError(PoissonTransformError, ArithmeticError):
    """A computation produced non-finite or otherwise unusable values."""


class CapabilityError(PoissonTransformError, TypeError):
    """The model lacks a capability required by the operation."""
