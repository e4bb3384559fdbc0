"""Exception types shared across the package."""


class AmfError(Exception):
    """Base class for package-specific failures."""


class InvalidDataError(AmfError):
    """Training data violates a structural requirement (duplicates, non-finite values, shape)."""


class NumericalDegeneracyError(AmfError):
    """A linear-algebra step failed even after jitter escalation."""


class InsufficientArchiveError(AmfError):
    """The sampler archive holds too few rows for the requested proposal."""


class InvalidTargetError(AmfError):
    """A log-posterior callable returned NaN where a finite value or -inf is required."""


class SimulatorFailureError(AmfError):
    """A forward model raised or returned non-finite outputs."""


class ConfigError(AmfError):
    """A run configuration or persisted file violates the documented schema."""


class PersistenceVersionError(ConfigError):
    """A persisted model file declares an unsupported format version."""


class EmptySamplesError(ConfigError):
    """A posterior summary was requested for an empty sample array."""
