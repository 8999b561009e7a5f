"""Exception hierarchy shared by all modules."""


class HamNoiseError(Exception):
    """Base class for library errors."""


class ConfigError(HamNoiseError):
    """Invalid parameters, unknown model names, inconsistent settings."""


class NumericError(HamNoiseError):
    """A numerical procedure failed to produce a trustworthy result."""


class ChartDomainError(NumericError):
    """Energy outside the region covered by the energy-angle chart."""

    def __init__(self, message, energy=None):
        super().__init__(message)
        self.energy = energy


class NonPeriodicOrbitError(NumericError):
    """Integrated level curve did not close on itself."""

    def __init__(self, message, energy=None):
        super().__init__(message)
        self.energy = energy


class SequencingError(NumericError):
    """An averaging order was requested before its prerequisites."""


class DegenerateModelError(NumericError):
    """Every averaged coefficient vanishes up to the truncation order."""


class AmbiguousFitError(NumericError):
    """Small-energy power law could not be identified uniquely."""

    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = tuple(candidates)


class NoNoiseFloorError(NumericError):
    """All diffusion coefficients vanish at the origin."""


class NoRootError(NumericError):
    """Root search found no admissible sign change."""


class RefusedRunError(ConfigError):
    """Ensemble requested for a prediction that no stability result covers."""
