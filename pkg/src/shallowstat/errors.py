"""Exception types raised by the toolkit."""


class ShallowStatError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ShallowStatError, ValueError):
    """Invalid parameters or configuration."""


class NoGuidedModes(ShallowStatError):
    """The waveguide supports no guided mode at the requested frequency."""


class NonConvergence(ShallowStatError):
    """A bracketed dispersion root failed to polish."""

    def __init__(self, msg, bracket=None):
        super().__init__(msg)
        self.bracket = bracket


class DomainError(ShallowStatError, ValueError):
    pass


class QuadratureFailure(ShallowStatError):
    pass


class IntegratorFailure(ShallowStatError):
    pass


class DegenerateSpectrum(ShallowStatError):
    pass


class SingularSystem(ShallowStatError):
    pass


class StepTooLarge(ShallowStatError, ValueError):
    pass


class EmptyAperture(ShallowStatError, ValueError):
    pass


class InsufficientData(ShallowStatError):
    pass


class ToneNotFound(ShallowStatError):
    pass


class ForwardModelFailure(ShallowStatError):
    pass


class DimensionMismatch(ShallowStatError, ValueError):
    pass


class BudgetExhausted(ShallowStatError):
    """The optimizer ran out of evaluations before converging."""


class ClippedSignal(UserWarning):
    """Recorded samples reach the full-scale value."""


class NotReachedWarning(UserWarning):
    """A correlation curve stays above one half over the whole aperture."""
