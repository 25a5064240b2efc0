"""Exception types raised across the package."""


class MixfdaError(Exception):
    """Base class for package errors."""


class SchemaError(MixfdaError, ValueError):
    """Input table or config does not have the required structure."""


class ValidationError(MixfdaError, ValueError):
    """Row-level validation failure; ``rows`` lists offending row numbers."""

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = list(rows)


class FamilySupportError(ValidationError):
    """Observed value outside the support of the declared family."""


class DomainError(MixfdaError, ValueError):
    """Argument outside the admissible domain."""


class DegenerateError(MixfdaError, ValueError):
    """Data carry no usable variation (empty bins, zero variance, ...)."""


class ConvergenceError(MixfdaError, RuntimeError):
    """Iterative fit failed to converge; ``trace`` holds diagnostics."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class SpecError(MixfdaError, ValueError):
    """Model specification refers to unknown covariates or is inconsistent."""


class DesignError(MixfdaError, ValueError):
    """Design matrices cannot be assembled for the data at hand."""


class PredictionError(MixfdaError, ValueError):
    """New data cannot be mapped onto a fitted model."""
