"""Exception taxonomy shared across the package.

Validation problems (bad shapes, out-of-contract arguments) are distinct from
capacity limits (inputs too large for a dense code path) and from numerical
failures (an iteration that did not converge, or internal cross-checks that
disagree). The CLI maps validation errors to exit code 1 and numerical
failures to exit code 2.
"""


class ValidationError(ValueError):
    """An argument violates a documented precondition."""


class UnsupportedFamilyError(ValidationError):
    """Operation requested for a model family that does not support it."""


class CapacityError(RuntimeError):
    """Input exceeds a configured size limit for this code path."""


class ConvergenceError(RuntimeError):
    """Iterative solver failed to reach its tolerance.

    Carries the best residuals seen so the caller can inspect how close the
    run got.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class NumericalError(RuntimeError):
    """Internal numerical consistency check failed."""
