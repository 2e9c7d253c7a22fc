"""Exception types shared across the package.

Every failure mode that callers are expected to branch on gets its own class;
plain ``ValueError``/``TypeError`` are reserved for programming errors that
should never survive testing.
"""


class PdpinnError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(PdpinnError, ValueError):
    """An argument violated a documented precondition."""


class OperatorUnderdeterminedError(PdpinnError):
    """A point family is too small to support the 2nd-order operator basis."""


class SingularMomentMatrixError(PdpinnError):
    """The 6x6 moment matrix of a family could not be factorized."""


class DegenerateFlowDirectionError(PdpinnError):
    """Plastic flow direction requested where the deviatoric stress vanishes."""


class PoisonedGradientError(PdpinnError):
    """A non-finite value appeared during reverse-mode accumulation."""


class UnsupportedOrderError(PdpinnError):
    """A derivative order outside the supported table was requested."""


class DatasetFormatError(PdpinnError):
    """A field-data file could not be parsed; message names the line."""


class ConfigError(PdpinnError):
    """A run configuration failed validation."""


class NotFittedError(PdpinnError):
    """An estimator method that requires ``fit`` was called before it."""
