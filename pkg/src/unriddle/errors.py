"""Exception types raised across the package."""


class UnriddleError(Exception):
    """Base class for all package errors."""


class OutOfVocabularyError(UnriddleError, KeyError):
    """A token or concept id is not in the knowledge store vocabulary."""

    def __init__(self, token):
        self.token = token
        super().__init__(f"out of vocabulary: {token!r}")

    def __str__(self):
        return self.args[0]


class ConvergenceError(UnriddleError):
    """An iterative routine stopped before meeting its tolerance."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class InfeasibleError(UnriddleError):
    """The linear constraints of an HL-MRF problem admit no point in the box."""


class RiddleFormatError(UnriddleError):
    """A riddle file is malformed or has no usable detections."""
