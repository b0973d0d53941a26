"""Exception hierarchy shared by every module."""


class TempairError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(TempairError, ValueError):
    """An argument violates a documented precondition."""


class SingularCovarianceError(TempairError, ValueError):
    """A covariance matrix that must be positive definite is not."""


class SizeLimitError(TempairError, ValueError):
    """A dense computation would exceed its size guard."""


class EmptyChainError(TempairError, ValueError):
    """An operation needs at least one posterior sample."""


class ConfigError(TempairError, ValueError):
    """An experiment or sampler configuration is invalid."""


class ToleranceError(TempairError):
    """A numerical check exceeded its tolerance."""
