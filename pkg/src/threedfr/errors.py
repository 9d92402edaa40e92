"""Exception hierarchy shared across the package."""


class ThreeDFRError(Exception):
    pass


class ShapeError(ThreeDFRError, ValueError):
    """Tensor dimensions are incompatible with an operation."""


class SizeError(ShapeError):
    """Requested allocation has a zero or overflowing element count."""


class ConfigurationError(ThreeDFRError, ValueError):
    pass


class IngestionError(ThreeDFRError, OSError):
    """A dataset directory or file does not match the expected layout."""


class WindowError(ThreeDFRError, ValueError):
    """A sample window cannot be built for the requested frame."""


class ManifestError(ThreeDFRError, ValueError):
    """A split manifest violates the leave-one-video-out invariant."""


class CheckpointError(ThreeDFRError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class ArchitectureError(CheckpointError):
    pass
