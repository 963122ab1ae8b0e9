"""Exception hierarchy for the cycletrans package.

Every error raised by the library derives from :class:`CycleTransError` so
callers (and the CLI) can report a single machine-parsable category line.
"""


class CycleTransError(Exception):
    """Base class for all cycletrans errors."""


# --- data ingestion ---------------------------------------------------------

class DatasetEmpty(CycleTransError):
    """A dataset directory or validation set contains no usable samples."""


class DecodeError(CycleTransError):
    """An image file exists but could not be decoded."""


class ChannelError(CycleTransError):
    """An input image is not single-channel grayscale."""


class BatchTooLarge(CycleTransError):
    """Requested batch size exceeds the smallest dataset."""


class PairingMismatch(CycleTransError):
    """A file present in one domain folder has no counterpart in the other."""


class IoError(CycleTransError):
    """An output location could not be created or written."""


# --- tensors / networks -----------------------------------------------------

class ShapeError(CycleTransError):
    """Operands have incompatible shapes."""


class FrozenViolation(CycleTransError):
    """A feature extractor was used where a frozen one is required."""


# --- numerics / training ----------------------------------------------------

class NumericalError(CycleTransError):
    """A quantity that must be finite is NaN or infinite."""


class TrainingDiverged(CycleTransError):
    """Training produced a non-finite loss.

    Carries the last loss breakdown (when available) as ``breakdown``.
    """

    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown


# --- metrics ----------------------------------------------------------------

class WindowError(CycleTransError):
    """Image is smaller than the metric's sliding window."""


class ScaleError(CycleTransError):
    """Image is too small for the requested number of dyadic scales."""


# --- checkpoints / configuration --------------------------------------------

class CheckpointError(CycleTransError):
    """A checkpoint could not be written."""


class IncompatibleCheckpoint(CycleTransError):
    """A checkpoint's manifest does not match the requested configuration."""


class ConfigError(CycleTransError):
    """A configuration file or flag set is invalid."""
