"""Exception hierarchy shared across the package."""


class DivformError(Exception):
    """Base class for all package-specific errors."""


class ExpressionSyntaxError(DivformError, ValueError):
    """Raised by the parser; carries the offending position."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvaluationError(DivformError, ArithmeticError):
    """A field produced a non-finite value; names the offending sub-expression."""


class ConstructionError(DivformError, ValueError):
    """A constructor rejected its inputs (failed probe or compatibility check)."""


class SamplingError(DivformError, RuntimeError):
    """Rejection sampling or quadrature failed to produce usable points."""


class NumericalError(DivformError, RuntimeError):
    """An internal numerical procedure failed (eigensolve, factorization, ensemble)."""


class ScenarioError(DivformError, ValueError):
    """A scenario file failed validation; message carries the field path."""
