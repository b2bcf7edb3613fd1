"""
Error types raised across the forecasting engine.
"""


class CasaError(Exception):
    """Base class for every structured error raised by the package."""


class ShapeMismatch(CasaError):
    pass


class InvalidKernel(CasaError):
    pass


class NonScalarLoss(CasaError):
    pass


class StateMismatch(CasaError):
    pass


class ConfigError(CasaError):
    pass


class ConfigMismatch(CasaError):
    pass


class DataError(CasaError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class MissingValue(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class InsufficientData(DataError):
    pass


class NonFiniteGradient(CasaError):
    def __init__(self, message, names=None):
        super().__init__(message)
        self.names = list(names or [])


class DivergenceDetected(CasaError):
    pass


class CheckpointError(CasaError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CheckpointParseError(CheckpointError):
    pass


class EmptySamples(CasaError):
    pass


class ZeroNorm(CasaError):
    pass


class IndexOutOfRange(CasaError):
    pass


class InsufficientPoints(CasaError):
    pass


class InvalidArgument(CasaError, ValueError):
    """A routine was called with an out-of-domain argument (rate, axis, bandwidth, op, tape)."""
