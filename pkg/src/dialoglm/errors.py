"""Exception types shared across the toolkit, mapped to CLI exit codes."""


class ToolkitError(Exception):
    """Base class for all toolkit failures."""

    exit_code = 1


class DataError(ToolkitError):
    """Malformed or inconsistent input data (corpus files, vocab, checkpoints)."""

    exit_code = 2


class NumericalError(ToolkitError):
    """Non-finite values or numerically invalid inputs in a computation."""

    exit_code = 3
