"""Exception types raised across the package."""


class EstimationError(RuntimeError):
    """An empirical constant could not be estimated from the samples."""


class InfiniteBoundError(ValueError):
    """A closed-form bound is infinite for the given inputs (e.g. zero noise)."""


class NumericalDivergenceError(ArithmeticError):
    """A solver produced a non-finite iterate.

    The partial run is attached as ``result`` so callers can inspect the
    trace up to the failure.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ConfigError(ValueError):
    """Malformed or invalid experiment configuration.

    ``line`` and ``column`` are set for syntax errors, ``field`` for
    validation errors.
    """

    def __init__(self, message, line=None, column=None, field=None):
        super().__init__(message)
        self.line = line
        self.column = column
        self.field = field
