"""Exception types raised across the toolkit."""


class RidgeRectError(Exception):
    """Base class for all toolkit errors."""


class ShapeMismatch(RidgeRectError):
    """Array shapes are inconsistent with each other or with the grid geometry."""


class DegenerateInput(RidgeRectError):
    """Input has no usable geometric content (e.g. coincident points, empty mask)."""


class SingularSystem(RidgeRectError):
    """Interpolation system is singular (collinear or coincident control points)."""


class FoldoverDetected(RidgeRectError):
    """Displacement field folds over itself; the forward map is not invertible."""


class InsufficientSamples(RidgeRectError):
    """Too few samples for the requested number of model components."""


class LengthMismatch(RidgeRectError):
    """Paired sequences have different lengths."""


class ZeroVariance(RidgeRectError):
    """Model has no variance to account for."""


class FlatImage(RidgeRectError):
    """Image dynamic range is too small to process."""


class EmptyForeground(RidgeRectError):
    """Segmentation found no foreground."""


class RangeError(RidgeRectError):
    """Value outside its documented domain."""


class ConfigError(RidgeRectError):
    """Invalid network or run configuration."""


class Divergence(RidgeRectError):
    """Training loss became non-finite."""


class SplitLeak(RidgeRectError):
    """A finger id appears in more than one dataset split."""


class AllEmpty(RidgeRectError):
    """Every pairing in a metric computation was empty."""


class EmptyScores(RidgeRectError):
    """Score list required for a metric is empty."""


class UnknownMatcher(RidgeRectError):
    """No matcher registered under the requested name."""


class FileFormatError(RidgeRectError):
    """File does not conform to its binary or text format."""
