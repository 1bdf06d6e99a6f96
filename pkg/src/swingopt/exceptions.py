"""Exception hierarchy shared across the engine."""


class SwingError(Exception):
    """Base class for all engine errors."""


class ConfigError(SwingError, ValueError):
    """Inconsistent or malformed configuration."""


class InfeasibleContractError(SwingError, ValueError):
    """Volume constraints admit no strategy."""


class StateError(SwingError, ValueError):
    """Cumulative volume outside the attainable corridor."""


class NumericError(SwingError, ArithmeticError):
    """A non-finite value appeared in a computation.

    ``node`` holds the offending tape node id when the failure was located on a
    tape, ``iteration`` and ``seed`` the training step to replay.
    """

    def __init__(self, message, node=None, iteration=None, seed=None):
        super().__init__(message)
        self.node = node
        self.iteration = iteration
        self.seed = seed


class UsageError(SwingError, RuntimeError):
    """API called out of order."""


class GridError(SwingError, ValueError):
    """Lattice volume grid does not represent the contract exactly."""
