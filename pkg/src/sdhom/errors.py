"""Exception types shared across the package."""


class SdhomError(Exception):
    """Base class for all package errors."""


class DomainEmpty(SdhomError):
    """A table or graph has an empty effective domain."""


class BoxTooSmall(SdhomError):
    """A conjugate argmax landed on the box boundary; enlarge the grid."""


class GridMismatch(SdhomError):
    """Two tables that must share a grid do not."""


class InvalidParameter(SdhomError):
    """A scalar or matrix parameter violates its contract."""


class NotConvex(SdhomError):
    """A table expected to be convex failed the midpoint scan."""


class EmptyImage(SdhomError):
    """graph_extract found no candidate points at a generous tolerance."""


class GrowthViolation(SdhomError):
    """A monotone field violates its declared growth/coercivity bounds."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class SelfdualizationFailed(SdhomError):
    """The constructed Lagrangian failed its selfduality certificate."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SolverStalled(SdhomError):
    """An iterative solve did not reach its tolerance within budget."""

    def __init__(self, message, history=None, node=None):
        super().__init__(message)
        self.history = [] if history is None else list(history)
        self.node = node


class CoercivityMissing(SdhomError):
    """A solve was requested for a Lagrangian without a growth record."""


class PrecomputeRequired(SdhomError):
    """A corrector needed by recovery_sequence has not been computed."""


class ExtractionError(SdhomError):
    """An extracted graph violates monotonicity (under-resolved table)."""


class ConfigError(SdhomError):
    """An experiment configuration is invalid.

    ``pointer`` is a JSON pointer to the offending entry.
    """

    def __init__(self, message, pointer=""):
        super().__init__(f"{message} (at {pointer or '/'})")
        self.pointer = pointer


class ReportError(SdhomError):
    """A report was requested for a manifest with missing artifacts."""
