"""Exception types raised across the package."""


class SDGMError(Exception):
    """Base class for all package errors."""


class ZeroVector(SDGMError, ValueError):
    pass


class DegenerateAngle(SDGMError, ValueError):
    pass


class InvalidDistance(SDGMError, ValueError):
    pass


class ShapeMismatch(SDGMError, ValueError):
    pass


class InsufficientData(SDGMError, ValueError):
    pass


class UninitializedStats(SDGMError, RuntimeError):
    pass


class DomainError(SDGMError, ValueError):
    pass


class OutOfRange(SDGMError, IndexError):
    pass


class ConfigError(SDGMError, ValueError):
    pass


class FormatError(SDGMError, ValueError):
    pass


class DegenerateLabels(SDGMError, ValueError):
    pass
