"""Exception types raised by the toolkit."""


class XferopsError(Exception):
    """Base class for all toolkit errors."""


class GridMismatch(XferopsError):
    """Objects live on incompatible grids."""


class NotAbsolutelyContinuous(XferopsError):
    """A measure charges a set that the reference measure does not."""


class HarmonicZeroDivision(XferopsError):
    """Normalization by h hit a zero of h where R(fh) is nonzero."""


class NotHarmonic(XferopsError):
    """Rh = h fails beyond tolerance."""


class ZeroLimit(XferopsError):
    """Power iteration collapsed to the zero function."""


class ChainMismatch(XferopsError):
    """Two computations of d(lambda R^n)/d(lambda) disagree."""


class KernelNotStochastic(XferopsError):
    """Transition probabilities do not sum to one."""


class NotUnitary(XferopsError):
    """The scaling weight W vanishes on a set of positive measure."""


class NotDecomposable(XferopsError):
    """The operator fails the pull-out identity needed for a decomposition."""


class NonConvergentCascade(XferopsError):
    """The filter does not satisfy m0(0) = sqrt(N)."""


class WeightZeroLoss(XferopsError):
    """A half-density has positive amplitude on a cell where W = 0."""


class DomainError(XferopsError):
    """Argument outside the documented domain."""
