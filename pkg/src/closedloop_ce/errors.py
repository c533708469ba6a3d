"""Exception types shared across the package."""


class DomainError(ValueError):
    """A value lies outside the domain where an inverse mapping is defined."""

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class ConsistencyError(RuntimeError):
    """An internal numerical identity failed by more than its tolerance."""


class EstimationError(RuntimeError):
    """The estimator could not produce any usable result."""
