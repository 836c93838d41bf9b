"""Exception types shared across the package.

Every error raised by this package derives from MaskPrivacyError, so callers
can catch the whole family with one clause while specific handlers stay
possible. Each class also inherits the closest builtin so generic handlers
(ValueError, KeyError, ...) keep working.
"""


class MaskPrivacyError(Exception):
    """Base class for all package errors."""


class MalformedFilenameError(MaskPrivacyError, ValueError):
    """Filename does not follow the age_gender_race_stamp convention."""


class DomainError(MaskPrivacyError, ValueError):
    """Value outside the documented domain (e.g. negative age)."""


class TooFewItemsError(MaskPrivacyError, ValueError):
    """Not enough records to perform the requested split."""


class NoFaceFoundError(MaskPrivacyError, RuntimeError):
    """Face locator could not find any face region in the image."""


class LandmarkFailureError(MaskPrivacyError, RuntimeError):
    """Landmark provider could not produce a usable 68-point set."""


class DegenerateGeometryError(MaskPrivacyError, ValueError):
    """Polygon construction hit collinear or zero-extent landmarks."""


class InsufficientDataError(MaskPrivacyError, ValueError):
    """Too few samples for the requested training procedure."""


class ConfigMismatchError(MaskPrivacyError, ValueError):
    """Configuration contradicts the task contract (e.g. wrong head size)."""


class EmptyPartitionError(MaskPrivacyError, ValueError):
    """A required dataset partition resolved to zero items."""


class CorruptCheckpointError(MaskPrivacyError, RuntimeError):
    """Checkpoint file exists but cannot be loaded or fails validation."""


class EmptyInputError(MaskPrivacyError, ValueError):
    """An operation that needs at least one record received none."""


class ZeroMarginError(MaskPrivacyError, ValueError):
    """Contingency table has an all-zero row or column margin."""


class DegenerateSamplesError(MaskPrivacyError, ValueError):
    """Both samples are empty or otherwise unusable for a rank test."""


class InvalidRankingError(MaskPrivacyError, ValueError):
    """Survey ranking is not a permutation of the attribute set."""


class KeyMismatchError(MaskPrivacyError, ValueError):
    """Importance weights and predictability maps disagree on keys."""


class OutOfRangePredictabilityError(MaskPrivacyError, ValueError):
    """Predictability score outside [0, 1]."""


class WeightMismatchError(MaskPrivacyError, ValueError):
    """Two PVI reports built from different importance weights."""


class StageError(MaskPrivacyError, RuntimeError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
