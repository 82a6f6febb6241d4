"""Exception types shared across the package."""


class PermviError(Exception):
    pass


class InfeasibleMatching(PermviError):
    """No finite-cost perfect matching exists."""


class NonPositiveEntry(PermviError, ValueError):
    pass


class DimensionTooLarge(PermviError, ValueError):
    pass


class DimensionMismatch(PermviError, ValueError):
    pass


class ShapeMismatch(PermviError, ValueError):
    pass


class DegenerateBound(PermviError, ArithmeticError):
    """A stick-breaking interval collapsed (u - l below the floor)."""


class ParseError(PermviError, ValueError):
    pass


class ValidationError(PermviError, ValueError):
    pass


class NonFiniteElbo(PermviError, FloatingPointError):
    pass
