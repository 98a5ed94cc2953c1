"""Exception types raised across the pipeline."""


class GreenScanError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(GreenScanError, ValueError):
    """An input violates a documented invariant."""


class FormatError(GreenScanError):
    """A raster file is unreadable or has the wrong shape/depth."""


class MetadataError(GreenScanError):
    """A capture sidecar is malformed or lacks a required field."""


class BoundsError(GreenScanError, IndexError):
    pass


class OutsideFootprintError(GreenScanError):
    """A thermal pixel is not covered by the registered RGN footprint."""


class EmptyFootprintError(GreenScanError):
    pass


class EmptyMaskError(GreenScanError):
    pass


class DegenerateScaleError(GreenScanError, ZeroDivisionError):
    """NDVI correction is undefined because the masked maximum is zero."""


class UndefinedCorrelationError(GreenScanError):
    pass


class SchemaError(GreenScanError):
    """An inventory file lacks a required column."""


class SpecError(GreenScanError):
    """A synthetic scene description cannot be rendered."""


class NoInputError(GreenScanError):
    pass


class InsufficientDataError(GreenScanError):
    pass


class PairingError(GreenScanError):
    """Prediction and truth files do not pair up one-to-one."""

    def __init__(self, message, orphans=()):
        super().__init__(message)
        self.orphans = list(orphans)
