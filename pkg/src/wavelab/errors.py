"""Exception types raised across the package."""


class WavelabError(Exception):
    """Base class for all package errors."""


class BandCrossing(WavelabError):
    """A wavevector lies on (or within r_bc of) the band-crossing set."""


class IndexOutOfRange(WavelabError, IndexError):
    """Band index or branch sign outside the admissible range."""


class EmptySample(WavelabError, ValueError):
    """A probe grid has fewer than two points."""


class BudgetExceeded(WavelabError):
    """An enumeration or direct sum would exceed its work budget."""


class NoConvergence(WavelabError):
    """An iteration did not reach a fixpoint; ``partial`` holds the last state."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class OverlapError(WavelabError, ValueError):
    """Wavepacket windows intersect."""


class GridTooCoarse(WavelabError, ValueError):
    """The k-grid cannot resolve a wavepacket window."""


class DegenerateFit(WavelabError):
    """A log-log fit has nothing to fit."""

    def __init__(self, message, s=float("inf")):
        super().__init__(message)
        self.s = s


class SizeMismatch(WavelabError, ValueError):
    """Array shape does not match the grid."""


class UnderResolved(WavelabError, ValueError):
    """Time step too large for the oscillation rate 1/rho."""


class NoContraction(WavelabError):
    """Picard residual failed to decrease."""


class BlowUp(WavelabError):
    """The solution norm exceeded the blow-up guard; ``partial`` holds the trajectory so far."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class WindowOverlap(OverlapError):
    """Interaction windows intersect."""


class GaugeUndefined(WavelabError):
    """Eigenvector gauge cannot be fixed (window touches a band crossing)."""


class GridMismatch(WavelabError, ValueError):
    """k-grid and eta-grid are not related by the dilation."""


class NotResonanceInvariant(WavelabError):
    """The spectrum is not closed under resonance."""


class PastBlowUp(WavelabError, ValueError):
    """Requested time is at or beyond the blow-up time."""


class ConfigError(WavelabError, ValueError):
    """Malformed experiment configuration."""
