"""Exception types shared across the package."""


class TrackbenchError(Exception):
    """Base class for all package-specific errors."""


class NonPositiveDepth(TrackbenchError):
    """A projection or back-projection was asked for a point at depth <= 0."""


class FormatError(TrackbenchError):
    """A file on disk does not follow the expected format."""


class MissingStream(TrackbenchError):
    """A sequence directory lacks a required data stream."""


class DimensionMismatch(TrackbenchError):
    """Rasters within one sequence disagree on dimensions."""


class KeyframeSkipped(TrackbenchError):
    """Frame skipping would drop the frame the point cloud is attached to."""


class NoValidDepth(TrackbenchError):
    """All depth samples around a pixel are invalid; the point cannot be anchored."""


class WindowOutOfBounds(TrackbenchError):
    """A descriptor support window does not fit inside the image."""


class InvalidSpec(TrackbenchError):
    """A trajectory or experiment specification is self-inconsistent."""


class ProtocolMismatch(TrackbenchError):
    """The statistics protocol is incompatible with the available ground-truth source."""
