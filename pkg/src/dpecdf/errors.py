"""Exception hierarchy shared by every module."""


class DpEcdfError(Exception):
    """Base class for all package errors."""


class ConfigError(DpEcdfError, ValueError):
    """A caller-supplied parameter or configuration value is invalid."""


class InvalidDomainError(ConfigError):
    pass


class InvalidParameterError(ConfigError):
    pass


class DataError(DpEcdfError, ValueError):
    """Input data is empty, malformed or otherwise unusable."""


class SensitivityError(DataError):
    """A streamed element exceeds the declared per-element bound."""


class StreamExhaustedError(DpEcdfError):
    pass


class UnknownNoiseIndexError(DpEcdfError, KeyError):
    pass


class UndefinedRatioError(DpEcdfError, ZeroDivisionError):
    pass


class DegenerateClassError(DataError):
    pass


class NonMonotoneError(DataError):
    pass


class MalformedKeyError(DataError):
    pass


class ConvergenceError(DpEcdfError):
    """The interior-point solver hit its iteration cap.

    ``residuals`` holds the final primal/dual residual norms and duality gap.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = dict(residuals or {})
