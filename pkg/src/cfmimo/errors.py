"""Exception types shared across the simulator."""


class ConfigurationError(ValueError):
    """An invalid parameter value or an inconsistent parameter combination."""


class DomainError(ValueError):
    """An argument outside a function's mathematical domain."""


class NumericalError(RuntimeError):
    """A numerical routine could not produce a trustworthy result."""


class SingularChannelError(NumericalError):
    """An estimated channel Gram matrix is singular or too ill-conditioned
    to invert (condition number above 1e12)."""
