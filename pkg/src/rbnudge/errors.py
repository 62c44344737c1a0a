"""Exception types shared across the package."""


class RBError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(RBError):
    """Invalid, inconsistent, or unparsable configuration input."""


class NumericalBlowupError(RBError):
    """Integration produced non-finite values or an unstable Courant number.

    Carries the step index at which the failure was detected (None when the
    failure is detected outside a stepping loop).
    """

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


class SolverFailureError(RBError):
    """Elliptic solve failed its residual check.  Carries the residual."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class UndefinedDiagnosticError(RBError):
    """A diagnostic quantity is undefined for the given state (e.g. a
    turnover time on an identically zero velocity field)."""


class UndefinedMetricError(RBError):
    """A skill metric is undefined for the given inputs (e.g. a relative
    error against a zero-norm reference)."""


class DegenerateSampleError(RBError):
    """A statistical routine received a sample with zero variance."""


class MissingInputError(RBError):
    """A required input artifact (snapshot, stream, manifest) is absent."""
