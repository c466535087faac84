"""Exception hierarchy.

Each family carries the process exit code the CLI reports for it.
"""


class PatchSyncError(Exception):
    exit_code = 1


class ConfigError(PatchSyncError, ValueError):
    """Invalid parameters, detected before any computation runs."""

    exit_code = 2


class InfeasibleError(ConfigError):
    """Parameters that cannot be satisfied by the given input."""


class DataError(PatchSyncError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class DisconnectedError(DataError):
    """A graph (or patch graph) that must be connected is not."""

    def __init__(self, message, components=None):
        self.components = components
        super().__init__(message)


class CoverError(DataError):
    """Patches do not cover the node set."""


class NumericalError(PatchSyncError, ArithmeticError):
    exit_code = 4


class DegenerateError(NumericalError):
    """Degenerate geometry: coincident points, rank deficiency and similar."""


class ConvergenceError(NumericalError):
    def __init__(self, message, residuals=None):
        self.residuals = residuals
        super().__init__(message)
