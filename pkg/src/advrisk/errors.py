"""Exception hierarchy shared across the package."""


class AdvriskError(Exception):
    """Base class for all advrisk-specific errors."""


class KernelConvergenceError(AdvriskError):
    """A scalar kernel's internal root-finder failed to converge.

    This signals a kernel bug or an invalid input regime, never a
    recoverable condition.
    """


class SolverError(AdvriskError):
    """A saddle-point or threshold solver failed to reach its tolerance.

    Carries the last iterate so callers can inspect where the solve got
    stuck.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class PhaseBoundaryError(AdvriskError):
    """The requested sampling ratio sits on the separability boundary.

    Both scalar programs degenerate there, so no prediction is emitted.
    """


class DegenerateModelError(AdvriskError):
    """The trained/predicted coefficient vector collapses to zero.

    Accuracy measures are undefined for the zero classifier.
    """


class ConfigError(AdvriskError):
    """An experiment configuration file is missing or inconsistent."""
