"""Exception types shared across the toolkit."""


class HesdError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatchError(HesdError, ValueError):
    def __init__(self, message: str, segment: str | None = None):
        super().__init__(message)
        self.segment = segment


class NumericalError(HesdError, FloatingPointError):
    """A non-finite value showed up where a finite one is required."""


class ConfigError(HesdError, ValueError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ParameterCapError(ConfigError):
    pass


class CheckpointError(HesdError):
    pass


class SchemaError(HesdError):
    pass
