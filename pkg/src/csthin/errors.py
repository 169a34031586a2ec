"""Exception types raised across the package."""


class CsThinError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(CsThinError, ValueError):
    pass


class OutOfDomainError(CsThinError, ValueError):
    pass


class InsufficientResolutionError(CsThinError, ValueError):
    pass


class UndefinedDirectivityError(CsThinError, ValueError):
    pass


class DegenerateNetworkError(CsThinError, ZeroDivisionError):
    pass


class InfeasibleError(CsThinError):
    """The residual bound is below the best least-squares residual.

    ``residual`` carries the certificate: the smallest residual any taper can
    reach on the given steering matrix.
    """

    def __init__(self, residual, xi):
        self.residual = float(residual)
        self.xi = float(xi)
        super().__init__(
            f"infeasible: minimum achievable residual {self.residual:.6g} "
            f"exceeds xi = {self.xi:.6g}"
        )


class PatternFormatError(CsThinError, ValueError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
