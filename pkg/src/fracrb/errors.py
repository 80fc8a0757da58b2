"""Exception hierarchy shared by all modules."""


class FracRBError(Exception):
    """Base class for library errors."""


class InvalidParameter(FracRBError, ValueError):
    pass


class MeshFormatError(FracRBError, ValueError):
    pass


class MeshValidationError(FracRBError, ValueError):
    pass


class SolverFailure(FracRBError, RuntimeError):
    """Iterative solve did not reach the requested tolerance."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class SingularMatrix(FracRBError, ArithmeticError):
    pass


class OracleTooLarge(FracRBError, ValueError):
    """Dense eigendecomposition requested above the size cap."""


class BasisFormatError(FracRBError, ValueError):
    """Corrupt, truncated or incompatible basis file."""
