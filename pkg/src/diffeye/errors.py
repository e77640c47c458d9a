"""Exception types raised across the package."""


class EyeModelError(ValueError):
    """Base class for all diffeye errors."""


class InvalidParameter(EyeModelError):
    pass


class DegenerateGeometry(EyeModelError):
    """Raised when the iris radius reaches the eyeball radius."""


class FrameMismatch(EyeModelError):
    pass


class BehindCamera(EyeModelError):
    def __init__(self, indices, eps_z):
        self.indices = list(indices)
        shown = self.indices[:10]
        more = "" if len(self.indices) <= 10 else f" (+{len(self.indices) - 10} more)"
        super().__init__(f"{len(self.indices)} point(s) with z <= {eps_z}: indices {shown}{more}")


class EmptyObservation(EyeModelError):
    pass


class BoundaryTooClose(EyeModelError):
    pass


class InvalidConfig(EyeModelError):
    pass


class Undefined2DGaze(EyeModelError):
    pass


class FitDiverged(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class LabelsAbsent(UserWarning):
    """Emitted when a label-driven loss is evaluated without any labels."""
