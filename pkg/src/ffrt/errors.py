"""Exception hierarchy shared across the toolkit."""


class FfrtError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(FfrtError):
    """Shapes or axis sizes are inconsistent with an operation's contract."""


class NumericError(FfrtError):
    """A NaN/Inf was produced or consumed where finite values are required."""


class ParameterError(FfrtError):
    """A scalar argument is outside its documented range."""


class ConfigError(FfrtError):
    """Run configuration is malformed or contains unknown keys."""


class DataError(FfrtError):
    """Dataset file, manifest, or image payload is malformed."""


class CheckpointError(FfrtError):
    """Checkpoint file is corrupt, truncated, or of an unsupported version."""


class MetricError(FfrtError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class EmptyRegionError(FfrtError):
    """A mask-derived region is empty where a nonempty one is required."""
