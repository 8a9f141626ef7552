"""Error types shared across the package."""


class MvAvatarError(Exception):
    """Base class for package errors."""


class BehindCameraError(MvAvatarError, ValueError):
    """A point to be projected lies at or behind the camera plane."""


class EmptyInputError(MvAvatarError, ValueError):
    """An operation received an empty mesh, list, or zero-area surface."""


class ShapeMismatchError(MvAvatarError, ValueError):
    """Array or map dimensions do not match what the operation requires."""


class FrameMismatchError(MvAvatarError, ValueError):
    """A normal map is expressed in a different camera frame than expected."""


class EmptySurfaceError(MvAvatarError, ValueError):
    """Depth lifting or mask harmonization produced no usable surface."""


class UnanchoredGaugeError(MvAvatarError, ValueError):
    """Normal integration has no depth anchor and no coupling: depth gauge is free."""


class InvalidInitializationError(MvAvatarError, ValueError):
    """Optimization was started from parameters with a non-finite loss."""


class FusionFailedError(MvAvatarError, RuntimeError):
    """Implicit fusion produced an empty or open iso-surface."""

    def __init__(self, message, field_stats=None):
        super().__init__(message)
        self.field_stats = field_stats or {}


class ComparisonError(MvAvatarError, ValueError):
    """Run manifests cannot be compared (for example different ground truth)."""


class StageError(MvAvatarError, RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage


class IncompleteCloudWarning(UserWarning):
    """Fusion input could not be completed (for example empty body prior)."""
