"""
Exception hierarchy shared by every module.

Loaders report problems as (value, message) tuples; everything else raises one of these.
"""


class TunaError(Exception):
    """Base class for all tuner errors"""


class DomainError(TunaError, ValueError):
    """Input outside an operation's domain (empty sample set, n < 1, ...)"""


class DegenerateInputError(DomainError):
    """Input whose statistic is undefined, e.g. a mean of (almost) zero"""


class ValidationError(TunaError, ValueError):
    """A value or record failed validation"""


class ExclusionViolationError(TunaError):
    """A configuration was measured twice on the same worker"""


class StateError(TunaError, RuntimeError):
    """Operation not allowed in the current state"""


class ProtocolError(TunaError, RuntimeError):
    """Ask/tell protocol misuse"""


class CapacityError(TunaError):
    """Requested budget cannot be served by the worker pool"""


class AdjustmentOverflowError(TunaError, ArithmeticError):
    """Noise model predicted a relative error of -100% or worse"""


class UsageError(TunaError):
    """Bad command-line input"""


class InvariantViolationError(TunaError):
    """Internal invariant broken during a run"""
