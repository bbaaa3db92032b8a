"""Exception types shared across the package."""


class GeoTrackNetError(Exception):
    """Base class for all package errors."""


class SchemaError(GeoTrackNetError):
    """Input CSV lacks a mandatory column."""


class TrackTooShort(GeoTrackNetError):
    pass


class OutOfRoi(GeoTrackNetError):
    """A state lies outside the region of interest.

    ``index`` holds the position of the offending state when raised from a
    sequence operation.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class InvalidFourHot(GeoTrackNetError):
    pass


class ShapeError(GeoTrackNetError, ValueError):
    pass


class GradError(GeoTrackNetError):
    pass


class NonFiniteGradient(GeoTrackNetError):
    pass


class NonFiniteValue(GeoTrackNetError):
    def __init__(self, message, timestep=None):
        super().__init__(message)
        self.timestep = timestep


class DomainError(GeoTrackNetError, ValueError):
    pass


class SpecMismatch(GeoTrackNetError):
    pass


class EmptyValidation(GeoTrackNetError):
    pass


class InactiveCell(GeoTrackNetError):
    pass


class ConfigError(GeoTrackNetError, ValueError):
    pass


class TrainingAborted(GeoTrackNetError):
    """Every batch of an epoch produced a non-finite loss or gradient."""
