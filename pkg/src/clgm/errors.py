"""Exception types shared across the package."""


class ClgmError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(ClgmError):
    """A matrix required to be SPD failed to factorize."""


class DomainError(ClgmError):
    """A response or parameter value is outside the family's domain."""


class NoConvergence(ClgmError):
    """An iterative solver hit its iteration cap before converging."""


class ModeSearchFailure(ClgmError):
    """The hyperparameter mode search could not bracket or locate a maximum."""


class EmptyGrid(ClgmError):
    """A hyperparameter grid holds no points."""


class DegenerateSupport(ClgmError):
    """A marginal density has zero-width support and cannot be gridded."""


class ConfigError(ClgmError):
    """A chain or experiment configuration is inconsistent."""


class DimensionMismatch(ClgmError):
    """Vector or matrix dimensions do not agree with the model."""


class SingularTransform(ClgmError):
    """A conditioning transform is singular at the supplied parameter value."""


class RankDeficient(ClgmError):
    """A design matrix has linearly dependent columns."""


class MissingParameter(ClgmError):
    """Two result sets do not expose a common parameter."""
