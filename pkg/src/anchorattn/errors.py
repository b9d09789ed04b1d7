"""Exception hierarchy shared by the library and the CLI.

Each error class carries the process exit code the CLI reports for it.
"""


class AnchorAttnError(Exception):
    exit_code = 1


class DimensionError(AnchorAttnError, ValueError):
    exit_code = 2


class NumericInputError(AnchorAttnError, ValueError):
    exit_code = 1


class SingularMassError(AnchorAttnError, ArithmeticError):
    exit_code = 1


class CapacityError(AnchorAttnError, MemoryError):
    exit_code = 3


class DataError(AnchorAttnError, ValueError):
    """Malformed dataset file; ``offset`` is the byte position of the problem."""

    exit_code = 4

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CAPACITY = 3
EXIT_DATA = 4
