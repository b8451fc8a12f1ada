"""Stationary and time-dependent coupled-mode envelopes on a 2D grid."""

from .classes import CLASSES, check_symmetry, class_spec, seed_field, symmetry_defect
from .evolution import CMEEvolution, integrate_cme_time
from .core import CMEField, CMEGrid, realified_jacobian, residual, residual_norm
from .newton import (SolutionBranch, continue_in_omega, edge_exponent, homotopy_continue, move_box,
                     regrid, solve_class, solve_cme_newton)
from .radial import RadialProfile, solve_radial_profile, townes_profile

__all__ = [
    "CLASSES", "CMEEvolution", "CMEField", "CMEGrid", "RadialProfile", "SolutionBranch", "check_symmetry",
    "class_spec", "continue_in_omega", "move_box", "edge_exponent", "homotopy_continue", "integrate_cme_time",
    "realified_jacobian", "regrid", "residual", "residual_norm", "seed_field", "solve_class",
    "solve_cme_newton", "solve_radial_profile", "symmetry_defect", "townes_profile",
]
