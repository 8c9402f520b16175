"""Error hierarchy shared by the toolkit."""

from typing import Optional


class BilevelError(Exception):
    """Base class for all toolkit errors."""
    pass


class CaseFormatError(BilevelError):
    """Case file could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnsupportedCostModelError(CaseFormatError):
    """Generator cost is not a polynomial of degree <= 2."""
    pass


class UnknownBusError(BilevelError):
    """A bus id referenced somewhere is not declared."""
    pass


class NetworkDisconnectedError(BilevelError):
    """Network graph has more than one island."""
    pass


class ProgramBuildError(BilevelError):
    """Invalid builder call (duplicate name, unknown variable, nonconvexity)."""
    pass


class MissingValueError(BilevelError):
    """A point does not cover every variable it is evaluated on."""
    pass


class InfeasiblePointError(BilevelError):
    """A point expected to be feasible violates its constraints."""
    pass


class TechniqueError(BilevelError):
    """Unknown technique, bad parameter or inapplicable strengthening."""
    pass


class SolverError(BilevelError):
    """A solve did not reach an acceptable status."""

    def __init__(self, message: str, solution=None):
        self.solution = solution
        super().__init__(message)


class VerificationError(BilevelError):
    """Re-clearing the market with fixed bids failed."""
    pass
