"""Exception hierarchy shared by every ascl module."""


class AsclError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(AsclError, ValueError):
    pass


class ConfigError(AsclError, ValueError):
    pass


class NumericError(AsclError, ArithmeticError):
    pass


class DegenerateVectorError(NumericError):
    """A vector with zero norm reached a cosine similarity."""


class DegenerateInputError(AsclError, ValueError):
    pass


class PairingError(AsclError, ValueError):
    pass


class StateError(AsclError, RuntimeError):
    pass


class FormatError(AsclError, ValueError):
    """Malformed feature file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
