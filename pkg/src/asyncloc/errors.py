"""Exception types raised across the toolkit."""


class NotPositiveDefinite(ArithmeticError):
    """A matrix expected to be symmetric positive definite failed factorization."""


class DimensionMismatch(ValueError):
    """Array arguments have inconsistent shapes."""


class InvalidSequence(ValueError):
    """A transmission sequence violates the protocol constraints."""


class DegenerateGeometry(ValueError):
    """Two nodes (nearly) coincide, so range derivatives are undefined."""


class MissingTruth(ValueError):
    """A node that is never sampled from a prior lacks a configured true position."""


class SingularNormalMatrix(ArithmeticError):
    """The weighted normal equations are numerically singular.

    Signals unobservable geometry or all-noninformative priors combined
    with a deficient observation design.
    """


class NonFiniteIterate(ArithmeticError):
    """An iterate turned NaN/inf during optimization."""


class SingularInformation(ArithmeticError):
    """The hybrid information matrix is numerically singular."""


class ConfigError(ValueError):
    """A scenario or experiment configuration is invalid."""


class CollisionError(RuntimeError):
    """Turn-around delays too short for the network span (strict mode only)."""
