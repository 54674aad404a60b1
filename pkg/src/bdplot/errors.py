"""Exception and warning types shared across the package.

Each error class carries the CLI exit code it maps to.
"""


class BDError(Exception):
    exit_code = 3


class ConfigError(BDError, ValueError):
    exit_code = 1


class DataError(BDError, ValueError):
    exit_code = 2


class NumericalError(BDError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else None


class BDWarning(UserWarning):
    """Recoverable condition worth recording in a run manifest."""
