"""Exception hierarchy shared across the package."""


class VSSlamError(Exception):
    """Base class for all package errors."""


class InvalidDepthError(VSSlamError, ValueError):
    pass


class BehindCameraError(VSSlamError, ValueError):
    pass


class FormatError(VSSlamError):
    """Malformed binary payload; ``offset`` is the byte position of the defect."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(VSSlamError):
    """Missing or inconsistent input data (files, trajectories, rasters)."""


class ConfigError(VSSlamError, ValueError):
    pass


class GenerationError(VSSlamError):
    pass


class RenderError(VSSlamError):
    pass


class EndOfSequence(VSSlamError, StopIteration):
    pass


class TrackingFailure(VSSlamError):
    """Pose estimation could not reach the minimum inlier count."""


class DegenerateInputError(VSSlamError, ValueError):
    pass


class UndefinedCVError(VSSlamError, ZeroDivisionError):
    pass
