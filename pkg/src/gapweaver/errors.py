"""Exception types raised across gapweaver.

Every failure mode that a caller might want to catch separately gets its own
class. They all derive from :class:`GapweaverError` so a blanket ``except``
still works.
"""


class GapweaverError(Exception):
    """Base class for all package errors."""


class InvalidPotentialError(GapweaverError, ValueError):
    """Potential is malformed, non-finite or not even about x = pi."""


class InvalidGridError(GapweaverError, ValueError):
    """Grid parameters violate the solver preconditions."""


class NumericalFailure(GapweaverError, RuntimeError):
    """An eigen- or linear solve did not meet its residual tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegeneracyError(GapweaverError, RuntimeError):
    """A requested eigenvalue is degenerate where a simple one is required."""


class NoBifurcationError(GapweaverError, RuntimeError):
    """The gap function has no sign change on the search interval."""


class DegenerateCoefficientError(GapweaverError, ValueError):
    """A coefficient needed for the algebraic reduction vanishes."""


class NoLocalizedSolutionError(GapweaverError, ValueError):
    """Parameters admit no decaying radial profile."""


class TailContaminationError(GapweaverError, RuntimeError):
    """The radial integration domain is too short to resolve the decay."""


class ConvergenceError(GapweaverError, RuntimeError):
    """Iteration diverged or hit its iteration cap.

    ``history`` holds the residual norms seen so far.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class SingularSystemError(GapweaverError, RuntimeError):
    """A Newton or shift-invert factorization was singular."""


class SymmetryError(GapweaverError, ValueError):
    """A field does not carry the symmetry its class tag promises."""


class NotBlockDiagonalizableError(GapweaverError, ValueError):
    """The class tag has no known block-diagonalizing transform."""


class CoverageError(GapweaverError, RuntimeError):
    """Finite-band search cannot certify the spectrum tail."""


class MemoryBudgetError(GapweaverError, MemoryError):
    """Requested grid exceeds the configured cell budget."""


class BlowUpError(GapweaverError, RuntimeError):
    """Time integration amplitude exceeded the blow-up threshold."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class FormatError(GapweaverError, ValueError):
    """A file on disk does not match its declared format."""


class InconsistentSpectrumWarning(UserWarning):
    """Edge eigenvalues do not interlace the expected way."""
