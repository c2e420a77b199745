"""Exception types shared across the package."""


class TTTLabError(Exception):
    """Base class for all package errors."""


class ShapeError(TTTLabError, ValueError):
    """Tensor shapes are incompatible with an operation."""


class ConfigError(TTTLabError, ValueError):
    """A configuration value is invalid."""


class InputError(TTTLabError, ValueError):
    """An argument is outside the accepted domain."""


class StateError(TTTLabError, RuntimeError):
    """An operation was called in the wrong state."""


class FormatError(TTTLabError, OSError):
    """A file on disk is malformed, truncated or of the wrong version."""


class UndefinedError(TTTLabError, ArithmeticError):
    """A closed-form quantity is undefined for the given inputs."""
