"""Exception types raised by the fitting and preprocessing routines."""


class LcaError(Exception):
    """Base class for numerical failures in this package."""


class ConditioningError(LcaError):
    """Covariance too ill-conditioned to whiten reliably."""


class RankError(LcaError):
    """A matrix required to have full rank is (numerically) rank deficient."""


class FitError(LcaError):
    """An iterative fit failed to converge or produce a usable result."""


class DfBracketError(FitError):
    """Requested effective degrees of freedom unreachable within the penalty bracket."""


class RestartFailure(LcaError):
    """Every restart of a multi-start fit failed; carries per-restart diagnostics."""

    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class FeasibilityError(LcaError):
    """Parameter values outside the feasible region of the model."""
