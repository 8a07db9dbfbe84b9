"""Shared error types mapped to CLI exit codes."""


class ConfigError(Exception):
    """Bad configuration or arguments (exit code 2)."""

    exit_code = 2


class DataError(Exception):
    """Missing or malformed input data (exit code 3)."""

    exit_code = 3


class NumericError(Exception):
    """Numeric failure such as NaN loss or divergence (exit code 4)."""

    exit_code = 4
