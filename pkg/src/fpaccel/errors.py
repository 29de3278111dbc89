"""Exception types raised across the package."""


class NumericalError(ArithmeticError):
    """A factorization or eigensolve could not be completed reliably."""


class PreconditionError(ValueError):
    """An input violates a documented precondition (e.g. not a fixed point)."""


class DegenerateSpectrumError(ValueError):
    def __init__(self, message, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class NotADescentDirection(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class ZeroInFovError(ValueError):
    """0 lies in (or on) the field of values, so the Beckermann bound does not apply."""


class BoundUnavailableError(ValueError):
    def __init__(self, message, delta1=None):
        super().__init__(message)
        self.delta1 = delta1


class DivergenceError(ArithmeticError):
    """An iteration produced non-finite values. ``trace`` holds the records so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class NonConvergenceError(RuntimeError):
    """Iteration budget exhausted. ``best`` is the iterate with the smallest gradient."""

    def __init__(self, message, best=None, gnorm=None):
        super().__init__(message)
        self.best = best
        self.gnorm = gnorm
