"""Exception types raised across the package."""


class IResNetBoundsError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(IResNetBoundsError, ValueError):
    pass


class NotCertifiedInvertible(IResNetBoundsError):
    """A residual block lacks a certified Lipschitz bound below one."""


class NoConvergence(IResNetBoundsError):
    """Fixed-point inversion hit its iteration cap (the certificate is wrong)."""


class AmplitudeTooLarge(IResNetBoundsError, ValueError):
    """Hat amplitude violates c < 1/(3 d M), so the block is not contractive."""


class ImageTooSmall(IResNetBoundsError):
    """The base map image does not contain the box the adversary needs."""


class BudgetExceeded(IResNetBoundsError):
    """A sample trace uses more than twice the nominal budget."""


class EmptyFilteredGrid(IResNetBoundsError):
    """No grid point survived filtering against the sample trace."""
