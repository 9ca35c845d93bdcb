"""Exception types shared across the package."""


class NSVError(Exception):
    """Base class for all package errors."""


class ConfigurationError(NSVError, ValueError):
    """Inputs are inconsistent (grid mismatch, bad parameters, bad config file)."""


class DomainError(NSVError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class InfeasibleHypotheses(NSVError):
    """The parameter set violates one of the admissibility intervals.

    ``condition`` names the first violated interval; ``window`` carries the
    partially evaluated :class:`~nsvdelay.delay.HypothesisWindow` when available.
    """

    def __init__(self, condition, message, window=None):
        super().__init__(f"{condition}: {message}")
        self.condition = condition
        self.window = window


class BlowUpError(NSVError, FloatingPointError):
    """A coefficient became non-finite or exceeded the blow-up threshold."""

    def __init__(self, t, message="solution blew up"):
        super().__init__(f"{message} at t={t!r}")
        self.t = t


class InsufficientData(NSVError, ValueError):
    """A run artifact is too short for the requested diagnostic."""


class MissingArtifact(NSVError, FileNotFoundError):
    """A post-processing command referenced an artifact that does not exist."""
