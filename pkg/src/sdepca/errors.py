"""Exception hierarchy shared by all modules."""


class SdepcaError(Exception):
    pass


class ConfigurationError(SdepcaError, ValueError):
    """Invalid problem, grid, policy or run configuration."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class PolicyError(SdepcaError, ValueError):
    """The step function returned a non-finite or non-positive value."""


class EvaluationError(SdepcaError, ArithmeticError):
    """A coefficient evaluated to a non-finite value during validation."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class DivergenceError(SdepcaError, ArithmeticError):
    """A numerical path left the finite range (or the blow-up bound)."""

    def __init__(self, message, step=None, time=None, path=None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.path = path


class NewtonError(SdepcaError, ArithmeticError):
    """Newton iteration of an implicit scheme did not converge."""

    def __init__(self, message, step=None, residual=None, path=None):
        super().__init__(message)
        self.step = step
        self.residual = residual
        self.path = path


class InsufficientDataError(SdepcaError, ValueError):
    """Too few usable points to fit a convergence order."""
