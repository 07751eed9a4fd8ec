"""Exception hierarchy.

Three families map onto CLI exit codes: configuration problems (2),
data problems (3) and numerical failures (4).
"""


class AttackSurfaceError(Exception):
    exit_code = 1


class ConfigError(AttackSurfaceError, ValueError):
    exit_code = 2


class ParameterDomainError(ConfigError):
    """A distribution or model parameter lies outside its domain."""


class ConstraintError(ConfigError):
    """A resource constraint (budget, capacity) would be violated."""


class DataError(AttackSurfaceError, ValueError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, rows=()):
        self.rows = list(rows)
        if self.rows:
            message = f"{message} (rows: {', '.join(map(str, self.rows))})"
        super().__init__(message)


class SchemaError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class MissingInputError(DataError):
    """A referenced input file does not exist or cannot be read."""


class NumericError(AttackSurfaceError, ArithmeticError):
    exit_code = 4


class DivergingIntegralError(NumericError):
    pass


class FitFailedError(NumericError):
    """Raised when no optimizer restart converged; ``best`` holds the best attempt."""

    def __init__(self, message, best=None, loglik=None):
        super().__init__(message)
        self.best = best
        self.loglik = loglik


class TruncationError(NumericError):
    pass


class WindowError(NumericError):
    pass


class SegmentationError(NumericError):
    pass


class ModelError(NumericError):
    pass
