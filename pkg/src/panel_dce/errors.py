"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input data or parameters violate a documented contract."""


class AssumptionViolation(ValidationError):
    """An assignment probability left the declared overlap bounds.

    Carries the offending ``(unit, time)`` pair when it is known.
    """

    def __init__(self, message, unit=None, time=None):
        super().__init__(message)
        self.unit = unit
        self.time = time


class NumericalError(ArithmeticError):
    """A computation could not be carried out (singular design, zero denominator...)."""
