"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Input or parameter dimensions do not match the network layout."""


class BackwardStateError(RuntimeError):
    """``backward`` was called without a matching train-mode forward pass."""


class TrainingError(ArithmeticError):
    """A training step produced a non-finite loss or gradient."""

    def __init__(self, message, layer=None, step=None):
        super().__init__(message)
        self.layer = layer
        self.step = step


class ContractViolation(RuntimeError):
    """An environment was driven outside its contract (e.g. step after terminal)."""


class UnsupportedEnvError(ValueError):
    pass


class ConfigError(ValueError):
    """Invalid experiment or strategy configuration."""


class InsufficientDataError(ValueError):
    pass
