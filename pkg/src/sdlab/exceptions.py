"""Exception hierarchy shared across the package."""


class SdlabError(Exception):
    """Base class for all sdlab errors."""


class InvalidInputError(SdlabError, ValueError):
    """Raised when an argument violates a documented precondition."""


class DegenerateDesignError(SdlabError):
    """Raised when a design has no signal and no noise, so a ratio is 0/0."""


class SolverError(SdlabError):
    """Raised when an iterative solver fails to reach its tolerance.

    Carries the final residual so callers can report how close the solver got.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BracketingError(SdlabError):
    """Raised when a one-dimensional minimizer cannot bracket a stationary point."""


class StepSizeError(SdlabError):
    """Raised when gradient descent diverges (non-finite loss) despite step halving."""


class InconsistentSolutionError(SdlabError):
    """Raised when a solved dual pair implies predictions outside (0, 1)."""
