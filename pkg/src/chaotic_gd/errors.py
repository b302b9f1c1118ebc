"""Exception hierarchy shared across the package."""


class ChaoticGDError(Exception):
    """Base class for all errors raised by chaotic_gd."""


class CatalogError(ChaoticGDError, KeyError):
    """Unknown catalog id or malformed catalog parameters."""

    def __str__(self):
        return Exception.__str__(self)


class DomainError(ChaoticGDError, ValueError):
    """An argument lies outside the domain of an operation."""


class UnsupportedError(ChaoticGDError):
    """The operation is not available for the given input."""


class ConfigError(ChaoticGDError, ValueError):
    """Invalid or inconsistent experiment configuration."""


class DivergenceError(ChaoticGDError, FloatingPointError):
    """An iteration produced a non-finite or runaway state.

    Attributes
    ----------
    state : ndarray
        The offending state (the first state that broke the guard).
    step : int
        Zero-based index of the iteration that produced ``state``.
    member : int or None
        Ensemble member index, ``None`` for single orbits.
    """

    def __init__(self, message, state=None, step=None, member=None):
        super().__init__(message)
        self.state = state
        self.step = step
        self.member = member
