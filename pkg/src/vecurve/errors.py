"""Exception hierarchy shared by every module.

Input problems derive from :class:`ValidationError` (CLI exit status 2);
numerical failures derive from :class:`NumericalError` (exit status 3).
"""


class VECurveError(Exception):
    """Base class for all package errors."""


class ValidationError(VECurveError, ValueError):
    """Input failed a validation check."""


class StructuralInputError(ValidationError):
    """Counting-process records overlap or leave gaps."""


class DomainError(ValidationError):
    """A function was evaluated outside its domain."""


class UnsupportedParameterError(ValidationError):
    """Parameter values for which a quantity is not defined."""


class NumericalError(VECurveError, ArithmeticError):
    """A numerical procedure failed."""


class DegenerateDataError(NumericalError):
    """Data cannot support the requested computation (empty risk set, zero person-time)."""


class UndefinedNNVError(NumericalError):
    """NNV requested for a non-positive number of cases averted."""


class ConvergenceError(NumericalError):
    """Newton-Raphson did not converge; carries the last iterate."""

    def __init__(self, message, last_iterate=None, iterations=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class SeparationWarning(UserWarning):
    """Monotone likelihood: an arm has no events while at risk."""
