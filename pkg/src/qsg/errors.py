"""Exception hierarchy shared across the package."""


class QSGError(Exception):
    """Base class for all package errors."""


class DomainError(QSGError, ValueError):
    """An argument lies outside the domain of the operation."""


class NumericError(QSGError, ArithmeticError):
    """A numerical routine failed or produced an out-of-tolerance residue."""


class CapacityError(QSGError):
    """A request exceeds a configured size limit."""
