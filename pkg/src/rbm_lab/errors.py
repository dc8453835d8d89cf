"""Exception types raised across the package."""


class RbmLabError(Exception):
    """Base class for all package errors."""


class GeometryError(RbmLabError, ValueError):
    """A point or vector violates a geometric precondition."""


class DegenerateStepError(RbmLabError, ArithmeticError):
    """The free move landed exactly on the obstacle centre, so the radial
    projection is undefined."""


class BudgetExceededError(RbmLabError, RuntimeError):
    """A simulation or quadrature ran out of its step/evaluation budget."""


class ValidationError(RbmLabError, ValueError):
    """Invalid parameters or configuration."""
