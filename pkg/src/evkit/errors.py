"""Exception hierarchy shared by every evkit module."""


class EvkitError(Exception):
    """Base class for all errors raised by evkit."""


class DimensionError(EvkitError, ValueError):
    """Operand shapes are incompatible."""


class DegenerateRowError(EvkitError, ValueError):
    """A softmax row has no finite entry."""


class UnsupportedKernelError(EvkitError, ValueError):
    """Kernel size is not odd (same-padding impossible)."""


class InvalidStatisticsError(EvkitError, ValueError):
    """Batch-norm statistics are unusable (negative variance, bad eps)."""


class NumericFailureError(EvkitError, ArithmeticError):
    """A function evaluation produced a non-finite value."""


class ConfigError(EvkitError, ValueError):
    """Invalid configuration value."""


class ParseError(EvkitError, ValueError):
    """Malformed input record.

    ``line`` is 1-based for text formats and ``None`` when not applicable.
    """

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        prefix = ""
        if source is not None:
            prefix += f"{source}:"
        if line is not None:
            prefix += f"{line}:"
        super().__init__(f"{prefix} {message}" if prefix else message)


class PolarityError(ParseError):
    """Polarity outside {-1, +1}."""


class BoundsError(ParseError):
    """Event coordinate or timestamp outside the sensor/time domain."""


class LengthError(ParseError):
    """Binary payload is not a whole number of records."""
