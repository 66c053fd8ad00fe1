"""Exception types raised by the pose pipeline."""


class PoselabError(Exception):
    """Base class for package-specific failures."""


class InitializationError(PoselabError):
    """Translation initialization failed (no usable depth in the box)."""


class EmptySurface(PoselabError):
    """Isosurface extraction found no sign change anywhere in the grid."""


class RefinementError(PoselabError):
    """Iterative refinement could not proceed (e.g. empty rendering)."""


class EstimationError(PoselabError):
    """Pose estimation produced no usable hypothesis."""
