"""Exception hierarchy for the KAM engine."""


class KamError(Exception):
    """Base class for all engine errors."""


class DimensionMismatchError(KamError):
    pass


class DomainError(KamError):
    """Invalid domain parameter (radius, strip width, cutoff, ...)."""


class DivergenceError(KamError):
    """A Lie series failed to contract at the reference weights."""


class ResonanceError(KamError):
    """An exactly vanishing divisor k.omega was hit."""


class CertificationError(KamError):
    """A divisor beyond the certified Fourier cutoff was requested."""


class StepInfeasibleError(KamError):
    """A single step cannot meet its error budget or threshold."""

    def __init__(self, message, margins=None):
        super().__init__(message)
        self.margins = dict(margins or {})


class ParameterDomainError(KamError):
    """The frequency correction left the allowed parameter ball."""


class NewtonError(KamError):
    """A Newton solve failed to converge."""


class ScheduleInfeasibleError(KamError):
    """The iteration schedule violates a threshold inequality."""

    def __init__(self, message, binding=None, empirical_gamma=None):
        super().__init__(message)
        self.binding = binding
        self.empirical_gamma = empirical_gamma


class GridTooSmallError(KamError):
    """Fourier reconstruction grid too coarse (aliasing diagnostic exceeded)."""
