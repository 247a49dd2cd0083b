"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is inconsistent or out of range."""


class EstimationError(RuntimeError):
    """A model fit could not be carried out (empty arm, degenerate data, ...)."""


class InfeasibleConstraintsError(RuntimeError):
    """The empirical likelihood constraints admit no feasible weight vector.

    Carries the moment direction that certifies the violation so callers can
    log it before falling back to uniform weights.
    """

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class DivergenceError(RuntimeError):
    """An iterative optimizer produced non-finite or exploding values."""
