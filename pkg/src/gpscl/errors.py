"""Exception hierarchy shared across the package."""


class GpsError(Exception):
    """Base class for every error raised by gpscl."""


class DimensionError(GpsError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(GpsError, ArithmeticError):
    """A computation produced NaN/Inf or hit a forbidden value (zero norm, zero probability)."""


class StateError(GpsError, RuntimeError):
    """An object was used in a state that does not allow the operation."""


class FormatError(GpsError, ValueError):
    """A file or token could not be parsed."""


class VersionError(FormatError):
    """A serialized artifact carries an unsupported version."""


class ConfigError(GpsError, ValueError):
    """Invalid configuration or input sizes."""
