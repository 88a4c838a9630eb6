class FluidLimitError(Exception):
    """Base class for library errors."""


class InvalidModelError(FluidLimitError, ValueError):
    """A chain or fluid model violates its declared invariants."""


class TruncationError(FluidLimitError, RuntimeError):
    """A simulation exhausted its event budget.

    The chain is assumed non-explosive; hitting the budget usually means it is
    not, or the budget is too small. ``partial`` holds the trajectory up to the
    last simulated event.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class IntegrationError(FluidLimitError, ArithmeticError):
    """The vector field produced a non-finite value."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class WindowNotBracketedError(FluidLimitError):
    """The fluid path horizon does not cover the requested exit window."""


class PreconditionError(FluidLimitError, ValueError):
    """An analytic bound was requested outside its stated range of validity."""


class NoAdmissibleAError(FluidLimitError):
    """No A below the search cap satisfies the bounded-jump sufficient condition."""
