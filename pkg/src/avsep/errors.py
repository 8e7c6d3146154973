"""Exception types shared across the package."""


class AvsepError(Exception):
    """Base class for all package errors."""


class GeometryError(AvsepError):
    """Shapes or lengths are incompatible with the requested operation."""


class FormatError(AvsepError):
    """A file (WAV, embedding, checkpoint, manifest, config) is malformed."""


class ConfigError(AvsepError):
    """A run configuration is invalid (unknown key, bad value)."""


class ConfigConflictError(AvsepError):
    """A checkpoint's embedded config disagrees with the supplied config."""


class TrainingError(AvsepError):
    """Training aborted (NaN loss or gradient)."""
