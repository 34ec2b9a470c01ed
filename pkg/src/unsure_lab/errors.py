"""Exception types raised across the package."""


class UnsureError(Exception):
    """Base class for all package errors."""


class QuadratureDiverged(UnsureError):
    pass


class InvalidPoissonInput(UnsureError, ValueError):
    pass


class DimensionMismatch(UnsureError, ValueError):
    pass


class EmptyDataset(UnsureError, ValueError):
    pass


class DegenerateScore(UnsureError, ArithmeticError):
    pass


class SingularGram(UnsureError, ArithmeticError):
    pass


class SpectralZero(UnsureError, ArithmeticError):
    pass


class DegenerateMoments(UnsureError, ArithmeticError):
    pass


class DegenerateDenominator(UnsureError, ArithmeticError):
    pass


class MissingMultipliers(UnsureError, ValueError):
    pass


class InvalidMMSE(UnsureError, ValueError):
    pass


class MissingGroundTruth(UnsureError, ValueError):
    pass


class NotPSD(UnsureError, ValueError):
    pass


class OperatorMismatch(UnsureError, ValueError):
    pass


class ShapeMismatch(OperatorMismatch):
    pass


class NonFiniteLoss(UnsureError, FloatingPointError):
    """Training produced a NaN/inf loss. ``snapshot`` holds the state at abort."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


class ConfigError(UnsureError, ValueError):
    pass
