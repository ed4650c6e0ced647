"""Exception types shared across the package."""


class GapError(ValueError):
    """Spectral gap too small: the principal subspace of the requested
    dimension is not uniquely defined at this input."""


class ConvergenceError(RuntimeError):
    """An iterative solver or optimizer failed to converge.

    Carries the last residual norm so callers can decide whether the
    partial result is usable.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
