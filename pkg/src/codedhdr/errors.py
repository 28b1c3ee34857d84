"""Exception types shared across the toolkit, mapped to CLI exit codes."""


class UsageError(Exception):
    """Bad command line, unknown config key, invalid option value (exit 1)."""


class DataError(Exception):
    """Malformed or inconsistent input data / files (exit 2)."""


class NumericError(Exception):
    """Non-finite values or a numerically failed run (exit 3)."""
