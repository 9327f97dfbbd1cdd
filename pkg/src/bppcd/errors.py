class InvalidInputError(ValueError):
    """Arguments or data outside the domain of an operation."""


class NumericFailureError(ArithmeticError):
    """A computation could not be completed in floating point (underflow, singular system)."""
