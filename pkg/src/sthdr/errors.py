"""Exception hierarchy shared across the package.

CLI exit codes are keyed off these classes (see :mod:`sthdr.cli`).
"""


class STHDRError(Exception):
    """Base class for all package errors."""


class ConfigError(STHDRError, ValueError):
    """Invalid model/training configuration or unknown variant."""


class ShapeError(STHDRError, ValueError):
    """Tensor shape or channel-count mismatch."""


class RangeError(STHDRError, ValueError):
    """Value outside its admissible range."""


class DataError(STHDRError):
    """Dataset-level problem (missing root, no scenes, ...)."""


class MalformedSceneError(DataError):
    """A scene directory does not follow the expected layout."""

    def __init__(self, directory, reason):
        self.directory = str(directory)
        self.reason = reason
        super().__init__(f"malformed scene {self.directory}: {reason}")


class DimensionError(DataError, ShapeError):
    """Frames of one scene disagree in resolution."""


class HDRFormatError(DataError):
    """Radiance RGBE file could not be parsed."""


class NumericAbort(STHDRError, RuntimeError):
    """Training produced a non-finite loss."""
