"""Band-edge resonances, coupled-mode envelopes and gap solitons for
two-dimensional separable periodic potentials.

Submodules are imported lazily by callers; the names below are the usual
entry points.
"""

from ._accel import BACKEND
from .errors import GapweaverError
from .potential import PeriodicPotential, load_potential
from .resonance import ResonanceCoefficients, compute_coefficients, find_bifurcation_eta

__version__ = "0.1.0"

__all__ = ["BACKEND", "GapweaverError", "PeriodicPotential", "ResonanceCoefficients",
           "compute_coefficients", "find_bifurcation_eta", "load_potential", "__version__"]
