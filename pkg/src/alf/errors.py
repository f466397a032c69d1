class ALFError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(ALFError, ValueError):
    pass


class NumericError(ALFError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class FormatError(ALFError, ValueError):
    """Malformed ALF1 container or dataset file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(ALFError, ValueError):
    pass
