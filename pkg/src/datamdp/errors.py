"""Exception types shared across the package."""


class DataMdpError(Exception):
    """Base class for all package errors."""


class InvalidParameter(DataMdpError, ValueError):
    pass


class InvalidState(DataMdpError, ValueError):
    pass


class InputNotInSet(DataMdpError, KeyError):
    pass


class Unsatisfiable(DataMdpError):
    """Raised when no sample count can meet a requested confidence."""


class InsufficientSamples(DataMdpError):
    pass


class SolverFailure(DataMdpError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InvalidInterval(DataMdpError, ValueError):
    pass


class IncompatibleFile(DataMdpError):
    pass


class ConfigError(DataMdpError, ValueError):
    """Config validation failure; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class SamplingError(DataMdpError):
    """Sampler failure while assembling constraints; ``sample`` is the row provenance."""

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample
