"""Exception hierarchy shared by all modules.

Each class carries the process exit code used by the command line tool.
"""


class SurvScoreError(Exception):
    exit_code = 1


class ValidationError(SurvScoreError, ValueError):
    """Bad input: malformed rows, unknown columns, invalid parameters."""

    exit_code = 1


class SchemaError(ValidationError):
    pass


class SplitError(ValidationError):
    pass


class RoutingError(ValidationError):
    """A categorical label was never seen while growing the forest."""


class NumericalError(SurvScoreError, ArithmeticError):
    """A fit or metric cannot be computed from the data given."""

    exit_code = 2


class ConvergenceError(NumericalError):
    pass


class UndefinedMetricError(NumericalError):
    pass


class DataIOError(SurvScoreError, OSError):
    exit_code = 3
