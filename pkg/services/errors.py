"""Exceptions raised by the freespec services."""


class FreeSpecError(Exception):
    """Base class for every freespec failure"""


class AtomicMeasure(FreeSpecError):
    """The measure is purely atomic and has no density"""


class LowerHalfPlane(FreeSpecError):
    """A Cauchy-transform argument is not in the open upper half-plane"""


class NoClosedForm(FreeSpecError):
    pass


class PoleAt(FreeSpecError):
    def __init__(self, location: complex, message: str = ""):
        self.location = location
        super().__init__(message or f"pole at {location}")


class ZeroCauchy(FreeSpecError):
    pass


class NoConvergence(FreeSpecError):
    def __init__(self, iterations: int, residual: float, message: str = ""):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message or f"no convergence after {iterations} iterations (residual {residual:.3e})")


class GridMismatch(FreeSpecError):
    pass


class UnsupportedOrder(FreeSpecError):
    pass


class DerivativeUnavailable(FreeSpecError):
    pass


class ThetaOutOfRange(FreeSpecError):
    pass


class StencilFailure(FreeSpecError):
    pass


class LeftUpperHalfPlane(FreeSpecError):
    """A fixed-point argument left the upper half-plane, or a subordination function fell below Im z"""


class NoConvergenceEig(FreeSpecError):
    pass


class EmptyInput(FreeSpecError):
    pass


class DimensionMismatch(FreeSpecError):
    pass


class DenominatorNearZero(FreeSpecError):
    """Free and classical fourth moments coincide within Monte Carlo error"""


class POutOfRange(FreeSpecError):
    pass


class RegimeWarning(UserWarning):
    """The perturbative scheme is applied outside the regime where it holds"""
