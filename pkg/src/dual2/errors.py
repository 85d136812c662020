"""Exception types shared across the package."""


class Dual2Error(Exception):
    """Base class for all errors raised by this package."""


class DomainError(Dual2Error):
    """An argument lies outside the domain of a function (or is non-finite)."""


class ConfigError(Dual2Error):
    """Inconsistent or unsupported configuration."""


class DisconnectedGraphError(Dual2Error):
    """The graph (or gossip matrix) does not correspond to a connected topology."""


class CapExceededError(Dual2Error):
    """An iteration cap was hit before the requested tolerance was reached.

    Carries the best iterate and residual seen so far, so callers can report
    useful diagnostics.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class DivergenceError(Dual2Error):
    """The outer loop's progress metric grew persistently instead of shrinking."""
