"""Exception hierarchy shared by all modules.

ValidationError subclasses map to CLI exit code 1, NumericalError
subclasses to exit code 2.
"""


class QuarticResonanceError(Exception):
    """Base class for all package errors."""


class ValidationError(QuarticResonanceError):
    """Invalid parameters or inconsistent configuration, detected before compute."""


class GridTooSmallError(ValidationError):
    """Grid box or resolution violates the oscillator sizing invariants."""


class IndexRangeError(ValidationError):
    """A level / group index is outside the solved range."""


class NumericalError(QuarticResonanceError):
    """A numerical stage failed its own quality contract."""


class ConvergenceError(NumericalError):
    """Grid refinement hit its cap without meeting the convergence target."""


class UnitarityError(NumericalError):
    """Assembled one-period operator failed the unitarity bound."""


class ClassificationError(NumericalError):
    """No separatrix accumulation point could be identified in a group spectrum."""


class LayerDetectionError(NumericalError):
    """No contiguous chaotic band found in the stochastic-layer scan."""


class CacheCorruptionError(QuarticResonanceError):
    """Checksum mismatch in a cache file."""
