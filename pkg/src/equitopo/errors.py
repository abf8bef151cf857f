"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A parameter is outside its documented range or inconsistent."""


class ConstructionError(RuntimeError):
    """Topology construction failed to reach the requested consensus factor.

    Carries the best candidate found so the caller can inspect how close
    the attempts came.
    """

    def __init__(self, message, best_matrix=None, best_factor=None):
        super().__init__(message)
        self.best_matrix = best_matrix
        self.best_factor = best_factor


class NonFiniteError(RuntimeError):
    """A simulation produced NaN or infinite values and was aborted."""
