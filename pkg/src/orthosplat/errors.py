"""Exception types shared across the pipeline."""


class OrthosplatError(Exception):
    """Base class for all pipeline errors."""


class PlyParseError(OrthosplatError):
    """Malformed splat PLY: bad header, missing property, truncation or bad value."""


class InputError(OrthosplatError):
    """Invalid argument to an operation (bad camera, dimension mismatch, ...)."""


class DegenerateGeometryError(OrthosplatError):
    """Scene geometry too degenerate to proceed (collinear points, zero-area bbox)."""


class FeatureFileError(OrthosplatError):
    """Bad feature dump: magic/version/size/NaN problems. Carries a byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SatelliteFreeViolation(OrthosplatError):
    """Satellite-tagged data reached a training-side code path."""


class DigestMismatchError(OrthosplatError):
    """Vocabulary/aggregator digests disagree between artifacts."""


class DegenerateDescriptorError(OrthosplatError):
    """All-zero descriptor cannot be normalized."""
