"""Exception types shared across the package."""


class CandiesError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(CandiesError, ValueError):
    """A parameter lies outside its admissible range."""


class DataError(CandiesError, ValueError):
    """Input data is malformed, too small or has the wrong shape."""


class NumericalError(CandiesError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite output."""
