"""Exception types raised across the package."""


class ExpintError(Exception):
    """Base class for all package errors."""


class DomainError(ExpintError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class UnsupportedOrderError(ExpintError, ValueError):
    pass


class DegenerateTableauError(ExpintError, ValueError):
    """Node parameters make a tableau coefficient undefined."""


class NotApplicableError(ExpintError, ValueError):
    pass


class UsageError(ExpintError, ValueError):
    """Inputs are individually valid but incompatible with each other."""


class BootstrapRequiredError(ExpintError, RuntimeError):
    pass


class ReferenceQualityError(ExpintError, RuntimeError):
    """A reference solution failed its self-refinement check."""


class InsufficientDataError(ExpintError, ValueError):
    pass


class DegenerateTableauWarning(UserWarning):
    pass
