"""Exceptions shared across the package."""


class ValidationError(ValueError):
    """Bad input: files, flags, or arguments that fail validation."""


class CalibrationInfeasibleError(RuntimeError):
    """No candidate threshold satisfies the propagation bound."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""
