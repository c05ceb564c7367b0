"""Exception types shared across the package."""


class CarnotError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(CarnotError, ValueError):
    """Operands are not dimensioned for the given group structure."""


class DomainError(CarnotError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class UnsupportedStructureError(CarnotError, ValueError):
    """Operation requires a structure it was not written for (e.g. Heisenberg only)."""


class InputError(CarnotError, ValueError):
    """Malformed numerical input (NaN costs, bad weights, ...)."""


class NumericalError(CarnotError, RuntimeError):
    """A numerical routine failed to converge; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class InfeasibleError(NumericalError):
    """A constrained solver found no feasible point."""
