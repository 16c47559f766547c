"""Exception types shared across the package."""


class RobustGnssError(Exception):
    """Base class for all package errors."""


class DuplicateKeyError(RobustGnssError):
    """Variable key already registered in the graph."""


class DimensionMismatchError(RobustGnssError):
    """Vector dimension does not match the variable kind."""


class MissingVariableError(RobustGnssError):
    """Factor references a variable the values container does not hold."""


class NonFiniteResidualError(RobustGnssError):
    """Factor evaluation produced NaN or infinity."""


class DisconnectedVariableError(RobustGnssError):
    """A variable is touched by no factor (or only by a switch prior)."""


class SingularNormalEquationsError(RobustGnssError):
    """Normal equations are numerically rank deficient; the configuration is unobservable."""


class NonPositiveKernelWidthError(RobustGnssError):
    """Robust kernel width must be strictly positive."""


class NegativeChiSquaredError(RobustGnssError):
    """Squared error input must be non-negative."""


class DegenerateMixtureError(RobustGnssError):
    """Null-hypothesis variance inflation must exceed 1."""


class AlreadyAugmentedError(RobustGnssError):
    """Graph already carries switch variables."""


class EqualFrequenciesError(RobustGnssError):
    """Dual-frequency combination requires two distinct frequencies."""


class CoincidentPositionsError(RobustGnssError):
    """Receiver and satellite positions coincide."""


class UndefinedUpError(RobustGnssError):
    """Local vertical is undefined (receiver too close to the geocenter)."""


class ElevationOutOfRangeError(RobustGnssError):
    """Elevation outside the domain of the troposphere mapping function."""


class BelowElevationMaskError(RobustGnssError):
    """Observation lies below the configured elevation mask."""


class NonPositiveSigmaError(RobustGnssError):
    """Measurement standard deviation must be strictly positive."""


class InvalidSpecError(RobustGnssError):
    """Scenario or fault specification failed validation."""


class InsufficientVisibilityError(RobustGnssError):
    """Fewer than four satellites visible at some epoch."""


class EpochMismatchError(RobustGnssError):
    """Two state series do not share an identical epoch grid."""


class EmptySeriesError(RobustGnssError):
    """Statistics requested over an empty series."""


class ObservationParseError(RobustGnssError):
    """Observation stream record is malformed."""


class ConfigError(RobustGnssError):
    """Run configuration is malformed; the message names the offending key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
