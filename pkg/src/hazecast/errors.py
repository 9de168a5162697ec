"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so library code should pick the
most specific class that applies instead of raising bare exceptions.
"""


class HazecastError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class UsageError(HazecastError):
    """Bad invocation: unknown flags, malformed config, unknown variant."""

    exit_code = 1


class DataError(HazecastError):
    """Problem with input data: schema violations, bad ranges, missing files."""

    exit_code = 2


class NumericError(HazecastError):
    """Numeric failure: non-finite values, unstable process configuration."""

    exit_code = 3
