"""Exception hierarchy shared by the library and the CLI."""


class GeofactorError(Exception):
    """Base class for all package errors."""


class ValidationError(GeofactorError, ValueError):
    """Bad input: malformed data, inconsistent dimensions, unknown config keys."""


class NumericalError(GeofactorError, ArithmeticError):
    """A covariance matrix could not be factorized, or a chain degenerated."""


class IntegrityError(ValidationError):
    """A stored file does not match its recorded hash or is truncated."""
