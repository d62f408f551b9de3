"""Shared error types. The CLI maps these onto exit codes."""


class TtigError(Exception):
    pass


class UsageError(TtigError):
    """Bad flags, missing arguments, unknown subcommand. Exit code 1."""


class DataError(TtigError):
    """Malformed input data or file format. Exit code 2."""


class NumericError(TtigError):
    """NaN/Inf loss, domain error, failed numeric contract. Exit code 3."""
