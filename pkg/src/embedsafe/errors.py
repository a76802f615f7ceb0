"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes (see cli.EXIT_CODES); library
users can catch the base classes.
"""


class EmbedSafeError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(EmbedSafeError):
    """Invalid configuration value or malformed config file."""


class DataError(EmbedSafeError):
    """Problem with an input data file or dataset contents."""


class IdxFormatError(DataError):
    """IDX file does not start with the expected magic number."""


class IdxLengthError(DataError):
    """IDX payload is shorter than the header-declared count requires."""


class ConsistencyError(DataError):
    """Images and labels files disagree (e.g. differing counts)."""


class SamplingError(DataError):
    """Triplet sampling impossible (no class with >= 2 images, or no negative)."""


class DimensionError(EmbedSafeError):
    """Array shapes incompatible with the requested operation."""


class ParameterError(EmbedSafeError):
    """Numeric parameter outside its documented range."""


class ValidationError(EmbedSafeError):
    """Model state failed a sanity check (NaN weights, bad shapes, ...)."""


class TrainingDivergedError(EmbedSafeError):
    """Training aborted on a NaN/Inf loss (exploding gradients)."""


class RankError(EmbedSafeError):
    """Not enough points (or dimensions) for the requested decomposition."""


class ProtocolError(EmbedSafeError):
    """Evaluation protocol violated (e.g. probe classes overlap stores)."""


class InterpolationError(EmbedSafeError):
    """Curve too degenerate to interpolate (single-point ROC)."""


class MissingArtifactError(EmbedSafeError):
    """A required checkpoint (or similar artifact) was not supplied or found."""


class CheckpointError(EmbedSafeError):
    """Checkpoint file corrupt or inconsistent with its manifest."""


class MigrationError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""
