"""Exception hierarchy shared by every module."""


class GevRegretError(Exception):
    """Base class for all errors raised by this project."""


class SpecError(GevRegretError, ValueError):
    """A model, game or experiment spec violates its invariants."""


class DimensionError(SpecError):
    """Array shapes do not line up."""


class DomainError(GevRegretError, ValueError):
    """An argument lies outside the domain of an operation."""


class BoundViolationError(GevRegretError):
    """A payoff vector exceeds the declared bound u_max."""


class DegenerateModelError(GevRegretError):
    """The model admits no step-size tuning (single alternative)."""


class MismatchError(GevRegretError):
    """A report was requested for a trace produced by another model or horizon."""


class CheckFailure(GevRegretError):
    """A hard numerical assertion failed."""
