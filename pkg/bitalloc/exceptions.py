# bitalloc/exceptions.py
"""
Error taxonomy shared by the library and the commands.

Each class carries the process exit status the commands report for it.
"""


class BitallocError(Exception):
    """Base class; ``exit_code`` is what the command layer exits with."""
    exit_code = 1

    def __init__(self, message, path=None):
        self.path = str(path) if path is not None else None
        if self.path:
            message = f"{self.path}: {message}"
        super().__init__(message)


class InputFormatError(BitallocError):
    """Malformed, missing or inconsistent input."""
    exit_code = 2


class ImageFormatError(InputFormatError):
    pass


class WeightFormatError(InputFormatError):
    pass


class GridFormatError(InputFormatError):
    pass


class CurveError(InputFormatError):
    """RD curve cannot be fitted (too few points, non-monotone, ...)."""


class ConfigError(InputFormatError):
    pass


class InferenceError(BitallocError):
    exit_code = 3


class OutputError(BitallocError):
    exit_code = 4


class GridMismatchError(BitallocError):
    """A QP/beta/bits grid does not match the image's block partition."""
    exit_code = 5


class NoOverlapError(BitallocError):
    exit_code = 6


class DimensionError(InputFormatError):
    """Arrays or images whose sizes do not agree."""
