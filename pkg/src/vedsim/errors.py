class VedsimError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(VedsimError, ValueError):
    """Invalid simulation or network configuration."""


class DomainError(VedsimError, ValueError):
    """Argument outside the domain of a model formula."""


class ParameterError(VedsimError, ValueError):
    """Algorithm parameter violates a precondition of a bound."""


class RejectedDecisionError(VedsimError, RuntimeError):
    """A slot decision violates a feasibility constraint."""


class NumericalError(VedsimError, RuntimeError):
    """An iterative solver failed to converge; carries the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
