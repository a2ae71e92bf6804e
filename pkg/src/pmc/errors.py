"""Exception types shared across the solver."""


class PmcError(Exception):
    """Base class for all solver errors."""


class ConfigurationError(PmcError, ValueError):
    """Invalid grid or solver configuration (bad N, dim, schedule, ...)."""


class GridMismatchError(PmcError, ValueError):
    """Fields that must share a grid do not."""


class DomainError(PmcError, ValueError):
    """Argument outside the mathematically admissible range."""


class ResolutionError(PmcError, ValueError):
    """Requested operation is unresolvable on the sampled lattice."""


class ContractViolationError(PmcError, ValueError):
    """Caller violated a documented precondition (e.g. nonzero-mean rhs)."""


class SolverFailureError(PmcError, RuntimeError):
    """Iterative solve did not converge; carries the final stats."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class BracketError(PmcError, RuntimeError):
    """Sign condition for the shift bracket failed; carries the endpoint values."""

    def __init__(self, message, f_lo=None, f_hi=None):
        super().__init__(message)
        self.f_lo = f_lo
        self.f_hi = f_hi


class ConstructionError(PmcError, ValueError):
    """Manufactured-field construction produced an inadmissible field."""


class HypothesisError(PmcError, RuntimeError):
    """Ambient field fails the solvability hypotheses; carries the report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
