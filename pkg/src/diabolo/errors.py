"""Exception hierarchy shared by the computational modules and the CLI."""


class DiaboloError(Exception):
    """Base class for every error raised by :mod:`diabolo`."""


class HermiticityError(DiaboloError, ValueError):
    """A matrix that must be Hermitian is not."""


class ParityError(DiaboloError, ValueError):
    """The zero-field Hamiltonian is not an even function of the spin."""


class NearDegeneracyError(DiaboloError, ArithmeticError):
    """A quantity was requested too close to a level crossing.

    ``gap`` holds the offending gap and ``field`` the sample where it was
    observed, when known.
    """

    def __init__(self, message, gap=None, field=None):
        super().__init__(message)
        self.gap = gap
        self.field = field


class FluxQuantizationError(DiaboloError, ArithmeticError):
    """A discretized Berry flux did not land on an integer."""


class SumRuleError(DiaboloError):
    """A topological sum-rule audit failed."""

    def __init__(self, message, reports=()):
        super().__init__(message)
        self.reports = list(reports)


class ClusteringError(DiaboloError):
    """Positions could not be grouped unambiguously."""


class ConfigError(DiaboloError, ValueError):
    """Invalid run configuration."""
