"""Exception types raised across the package."""


class NphInferError(Exception):
    """Base class for all errors raised by nphinfer."""


class EmptyGroup(NphInferError):
    """A group contains no records."""


class InvalidRecord(NphInferError):
    """A subject record violates basic validity (negative time, bad group)."""


class QuantileUndefined(NphInferError):
    """The survival curve never drops to the requested level within follow-up."""


class DegenerateHazard(NphInferError):
    """The local-hazard window contains no events or no person-time."""


class HorizonBeyondData(NphInferError):
    """A milestone or cutoff lies beyond a group's observed follow-up."""


class DegenerateTransform(NphInferError):
    """A log-type transform is undefined (zero survival, zero cumulative
    hazard or a vanishing weighted hazard integral)."""


class NonconvergentFit(NphInferError):
    """The partial-likelihood score has no root (monotone likelihood) or the
    solver exceeded its iteration budget."""


class DegenerateVariance(NphInferError):
    """A parameter has zero estimated variance and cannot be standardized."""


class PerturbationFailure(NphInferError):
    """Too many perturbation resamples were rejected as degenerate."""


class InvalidCorrelation(NphInferError):
    """A correlation matrix is indefinite beyond the repair tolerance."""


class TooManyParameters(NphInferError):
    """Closed testing was requested for more parameters than supported."""


class UnknownScenario(NphInferError):
    """Scenario or parameter-set identifier outside the known range."""
