"""Exception types shared across the package."""


class LmpSpikeError(Exception):
    """Base class for all package errors."""


class CaseError(LmpSpikeError):
    """Invalid or unparseable grid case data."""


class ConfigError(LmpSpikeError):
    """Invalid analysis configuration."""


class InfeasibleError(LmpSpikeError):
    """The requested optimization problem has no feasible point."""


class NumericalError(LmpSpikeError):
    """A numerical routine failed to converge or returned garbage."""


class SingularActiveSetError(LmpSpikeError):
    """Active-set KKT system is rank deficient (constraint qualification fails)."""
