"""Exception types raised across the package."""


class ThinHomogError(Exception):
    """Base class for all package errors."""


class InvalidProfileError(ThinHomogError, ValueError):
    pass


class GeometryError(ThinHomogError, ValueError):
    """Raised when a domain spec or mesh request is geometrically invalid."""


class ResolutionError(GeometryError):
    """Requested mesh spacing cannot resolve the oscillation scales.

    ``required`` carries the largest admissible spacing.
    """

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class DimensionError(ThinHomogError, ValueError):
    pass


class SingularityError(ThinHomogError, ValueError):
    """Linearization is singular (p < 2 without regularization)."""


class SolverError(ThinHomogError, RuntimeError):
    pass


class NonConvergenceError(SolverError):
    """Iteration limit reached; carries the last iterate and the history."""

    def __init__(self, message, last=None, history=None):
        super().__init__(message)
        self.last = last
        self.history = list(history or [])
