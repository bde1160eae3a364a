"""Exception types raised across tomoforge."""


class TomoforgeError(Exception):
    """Base class for all package errors."""


class ZeroNorm(TomoforgeError, ValueError):
    pass


class SingularState(TomoforgeError, ValueError):
    pass


class ConfigError(TomoforgeError, ValueError):
    pass


class SchemaError(TomoforgeError, ValueError):
    """Raised when a persisted file has a missing or unexpected header."""


class DegenerateDesign(TomoforgeError, ValueError):
    pass


class AllMissingRow(TomoforgeError, ValueError):
    pass


class ShapeMismatch(TomoforgeError, ValueError):
    pass


class Divergence(TomoforgeError, RuntimeError):
    """Training produced a non-finite loss."""


class RankDeficient(TomoforgeError, UserWarning):
    """Emitted (as a warning) when stacked predictions are collinear."""


class UndefinedMetric(TomoforgeError, ValueError):
    pass


class SplitLeak(TomoforgeError, ValueError):
    """A fit that must only see held-out rows was given training rows."""
