"""Exception hierarchy shared by every ratio_forge module."""


class RatioForgeError(Exception):
    """Base class for all errors raised by ratio_forge."""


class InputError(RatioForgeError, ValueError):
    """Malformed or out-of-contract input data.

    ``field`` names the offending record field when one can be identified.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class StructuralInputError(InputError):
    """Per-token fields of a record disagree in length or shape."""


class ParameterError(RatioForgeError, ValueError):
    """Invalid filter, clipping or training parameters."""


class NumericError(RatioForgeError, ArithmeticError):
    """Base for numeric failures (saturation, divergence)."""


class SaturationError(NumericError):
    """A filtered log-ratio left the allowed range before exponentiation."""

    def __init__(self, message, index=None, value=None):
        super().__init__(message)
        self.index = index
        self.value = value


class DivergenceError(NumericError):
    """Training parameters blew past the divergence guard."""

    def __init__(self, message, step, metrics=None):
        super().__init__(message)
        self.step = step
        self.metrics = metrics


class StaleLogProbError(RatioForgeError, RuntimeError):
    """logp_new of a trace was not recomputed under the current policy."""


class BoundaryTokenError(RatioForgeError, RuntimeError):
    """A token sits on a clip boundary; finite differences are unreliable there.

    Callers should treat this as a retry signal (perturb the seed and resample).
    """


class TraceFormatError(InputError):
    """Base for trace-file errors; carries the 1-based line number."""

    def __init__(self, message, line=None, field=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, field=field)
        self.line = line


class TraceParseError(TraceFormatError):
    pass


class TraceValidationError(TraceFormatError):
    pass


class SchemaVersionError(TraceFormatError):
    pass


class ConfigError(InputError):
    pass


class UnknownConfigKeyError(ConfigError):
    def __init__(self, key):
        super().__init__(f"unknown configuration key: {key!r}", field=key)
        self.key = key


class ReportSchemaError(InputError):
    """Reports being merged disagree on their column layout."""
