"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, InfeasibleError -> 3,
NumericalError -> 4. Library callers can catch the common base class.
"""


class DesignError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DesignError):
    """Invalid configuration file or invalid constructor arguments."""


class InfeasibleError(DesignError):
    """The design problem cannot be solved as posed (not a bug)."""


class EstimabilityError(InfeasibleError):
    """The target contrast is not estimable under the full design space."""


class NumericalError(DesignError):
    """A numerical operation failed (singular matrix, invalid domain)."""


class SingularMatrixError(NumericalError):
    """A matrix inversion or rank-1 update hit a (near-)singular pivot."""
