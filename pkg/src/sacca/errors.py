"""Exception types raised across the package."""


class SaccaError(Exception):
    """Base class for all errors raised by :mod:`sacca`."""


class ValidationError(SaccaError, ValueError):
    """Bad input shape, value or configuration."""


class ConstantColumn(ValidationError):
    def __init__(self, index, view="x"):
        self.index = index
        self.view = view
        super().__init__(f"column {index} of view {view!r} has zero variance")


class TooFewSamples(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NonpositiveBandwidth(ValidationError):
    pass


class DegenerateColumn(ValidationError):
    pass


class InvalidDelta(ValidationError):
    pass


class NumericalError(SaccaError, ArithmeticError):
    """A numerical routine could not produce a valid result."""


class NotPositiveDefinite(NumericalError):
    pass


class SingularLocalFit(NumericalError):
    pass


class AllSmoothedZero(NumericalError):
    """Every smoothed target vanished, so no direction can be chosen."""


class ZeroTarget(NumericalError):
    pass


class EmptySelection(NumericalError):
    pass
