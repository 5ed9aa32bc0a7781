"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``FormatError`` -> 2,
``NumericError`` / ``TrainingDiverged`` -> 3.
"""


class LurError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LurError, ValueError):
    pass


class FormatError(LurError, ValueError):
    """Malformed dataset, head blob, plan or report file."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class NumericError(LurError, ArithmeticError):
    pass


class TrainingDiverged(NumericError):
    def __init__(self, message, epoch=None):
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
        self.epoch = epoch
