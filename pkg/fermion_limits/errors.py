"""This module contains custom exceptions for the fermion_limits package."""


class FermionLimitsError(Exception):
    """Base class for exceptions in the fermion_limits package."""

    pass


class ContractError(FermionLimitsError):
    """Exception raised for errors in the shape, grid or timing of arguments."""

    pass


class DomainError(FermionLimitsError):
    """Exception raised for errors in parameters outside their admissible range."""

    pass


class StateValidationError(FermionLimitsError):
    """Exception raised for errors in the invariants of a quantum state."""

    pass


class NumericalError(FermionLimitsError):
    """Exception raised for errors in a numerical consistency check."""

    pass


class ResolutionError(NumericalError):
    """Exception raised for errors in resolving a state on a grid."""

    pass


class CapacityError(FermionLimitsError):
    """Exception raised for errors in problem sizes above a capacity bound."""

    pass


class ObserverError(FermionLimitsError):
    """Exception raised for errors in an observer called during an evolution."""

    pass


class ConfigError(FermionLimitsError):
    """Exception raised for errors in an experiment configuration.

    Attributes:
        line: line number of the offending entry, if known
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class AcceptanceError(FermionLimitsError):
    """Exception raised for errors in meeting a preset acceptance band."""

    pass
