"""Exception hierarchy shared by all modules."""


class SolitonLabError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(SolitonLabError, ValueError):
    """Non-finite or out-of-range input."""


class InsufficientDataError(SolitonLabError):
    """Too few samples or too little resolution for the requested estimate."""


class TrajectoryEscapeError(SolitonLabError):
    """A phase-space component exceeded the blow-up cap."""

    def __init__(self, message, y_exit=None):
        super().__init__(message)
        self.y_exit = y_exit


class InvalidTrajectoryError(SolitonLabError):
    """The trajectory left the admissible half-space (Y changed sign)."""


class DegenerateTrajectoryError(SolitonLabError):
    """W or Y non-positive where a Riemannian profile is required."""


class NoCriticalPointError(SolitonLabError):
    """The potential gradient has no sign change on the profile grid."""


class DataInconsistencyError(SolitonLabError):
    """Computed data contradict a structural property (monotonicity, sign pattern)."""


class OutOfTimeDomainError(SolitonLabError):
    """The scale factor 1 + 2*lambda*t dropped to 1/2 or below."""


class DomainExitError(SolitonLabError):
    """An evaluation point left the domain on which the profile is known."""

    def __init__(self, message, t_exit=None):
        super().__init__(message)
        self.t_exit = t_exit


class BoundViolationError(SolitonLabError):
    """A two-sided analytic bound failed beyond the allowed slack."""


class ConfigurationError(SolitonLabError):
    """Weight or run configuration inconsistent with a checkable inequality."""


class StepRejectedError(SolitonLabError):
    """A linear step was rejected (loss of parabolicity or failed self-test)."""


class SingularSystemError(SolitonLabError):
    """The sparse linear solve failed."""


class NumericalBlowupError(SolitonLabError):
    """NaN or inf appeared in a computed state."""

    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


class DegenerateStateError(SolitonLabError):
    """Perturbation state with eta + 1 <= 0 or xi + 1 <= 0."""
