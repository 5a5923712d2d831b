"""Exception types shared across the package."""


class RigviewError(Exception):
    """Base class for all package-specific errors."""


class NonPositiveDepthError(RigviewError):
    """A projection or unprojection was asked for a point at depth <= 0."""


class PointBehindCameraError(RigviewError):
    """A transformed scene point landed behind the destination camera."""


class EmptyGraphError(RigviewError):
    """A correspondence graph with no edges was passed to an operation that needs one."""


class DivergedError(RigviewError):
    """The solver could not find an acceptable step before hitting the damping ceiling."""


class ShapeMismatchError(RigviewError):
    """Array arguments that must agree in shape do not."""


class NoNeighborsError(RigviewError):
    """Consistency masking requires at least one neighboring view."""


class MissingDepthError(RigviewError):
    """A dataset image is missing its depth map or sky mask."""


class InvalidRayError(RigviewError):
    """Ray direction is not unit length or its [near, far] interval is invalid."""


class UnknownImageError(RigviewError):
    """An image id was used that has no registered correction codes."""


class NonFiniteLossError(RigviewError):
    """A loss term evaluated to NaN or infinity."""


class EmptyDatasetError(RigviewError):
    """Batch sampling was requested from an empty dataset."""


class StepOutOfRangeError(RigviewError):
    """A schedule was queried outside [0, n_iters]."""


class InvalidSpecError(RigviewError):
    """A scene specification violates its own invariants."""


class NoOverlapError(RigviewError):
    """No scene point is co-visible in two or more views."""


class TooFewImagesError(RigviewError):
    """Splitting requires at least 8 images per camera."""


class ImageTooSmallError(RigviewError):
    """Image is smaller than the metric's filter window."""


class BadCheckpointError(RigviewError):
    """Checkpoint file is missing, corrupt, or has an unsupported version."""
