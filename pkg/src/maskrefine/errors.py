"""Exception types shared across the package."""


class MaskRefineError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(MaskRefineError):
    """Two rasters that must share dimensions do not."""


class LabelOutOfRange(MaskRefineError):
    """A label map contains a class ID outside the configured range."""


class EmptyMask(MaskRefineError):
    """An operation requiring at least one set pixel received an empty mask."""


class EmptyForeground(MaskRefineError):
    """No foreground feature vectors were available."""


class EmptyProposal(MaskRefineError):
    """Every decoded proposal mask was empty."""


class NoObject(MaskRefineError):
    """The oracle backend found no object matching the prompts."""


class BackendFailure(MaskRefineError):
    """A segmenter backend failed (transport error or server-side error)."""


class Truncated(MaskRefineError):
    """A byte stream ended before a complete frame could be read."""


class Oversize(MaskRefineError):
    """A frame payload exceeds the configured size cap."""


class TensorFormatError(MaskRefineError):
    """A feature tensor file is malformed."""


class NoScoredClasses(MaskRefineError):
    """No class had a non-empty union; the mean IoU is undefined."""


class NoScoredPixels(MaskRefineError):
    """The confusion matrix counted zero pixels."""


class UnpairedFiles(MaskRefineError):
    """Prediction and ground-truth directories do not pair up."""


class PlacementFailure(MaskRefineError):
    """Scene generation could not place an object within the retry budget."""


class BadConfig(MaskRefineError):
    """A pipeline configuration value is invalid."""
