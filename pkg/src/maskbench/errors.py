"""Exception hierarchy. Each class carries the CLI exit code for its category."""


class MaskbenchError(Exception):
    exit_code = 1


class InputError(MaskbenchError):
    """A file is missing or cannot be parsed."""

    exit_code = 3


class ValidationError(MaskbenchError, ValueError):
    """Values are well-formed but violate a contract (enum, range, duplicates)."""

    exit_code = 4


class DimensionError(ValidationError):
    exit_code = 5


class DataError(MaskbenchError):
    """The data cannot support the requested evaluation (missing class, cell, pair)."""

    exit_code = 6
