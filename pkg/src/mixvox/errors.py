"""Exception hierarchy shared by all mixvox modules."""


class MixvoxError(Exception):
    """Base class for all mixvox errors."""


class ShapeError(MixvoxError):
    """Incompatible array shapes; the message reports both shapes."""


class NumericsError(MixvoxError):
    """NaN/Inf values, unguarded log/div inputs, or failed numeric checks."""


class ConfigError(MixvoxError):
    """Invalid or inconsistent configuration."""


class DataError(MixvoxError):
    """Invalid exam data or on-disk bundle."""


class ChecksumError(DataError):
    """Payload checksum or size verification failed."""


class FormatVersionError(DataError):
    """On-disk format version is not supported."""


class DegenerateContrastError(DataError):
    """Normalization statistics are degenerate (flat intensities)."""


class LayoutError(DataError):
    """Gland geometry too small or malformed for region construction."""


class GenerationError(DataError):
    """Synthetic exam generation failed (e.g. placement retries exhausted)."""


class CheckpointError(MixvoxError):
    """Checkpoint serialization/deserialization failure."""


class IncompatibleCheckpointError(CheckpointError):
    """Checkpoint config does not match the requested configuration."""


class NonFiniteGradientError(NumericsError):
    """Optimizer step rejected because a gradient was NaN/Inf."""
