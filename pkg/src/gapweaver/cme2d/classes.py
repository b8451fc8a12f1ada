"""Solution classes: active components, symmetry generators and seeds.

Two-component classes are seeded at the mean curvature abar = (alpha1 +
alpha2)/2, where the system is isotropic and A1, A2 are multiples of one
radial profile; ``homotopy_continue`` then deforms to the true curvatures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SymmetryError
from .core import CMEField, CMEGrid
from .radial import shoot_profile, solve_radial_profile
from .symmetry import Generator


def _g(perm=(0, 1, 2), mult=(1, 1, 1), conj=False, pm="id", name=""):
    return Generator(tuple(perm), tuple(complex(m) for m in mult), bool(conj), pm, name)


R1 = _g(pm="r1", name="R1")
R2 = _g(pm="r2", name="R2")
SW = _g(pm="sw", name="S")
K = _g(conj=True, name="K")
# reflections for a charge-one phase e^{i theta}
R1V = _g(mult=(-1, -1, -1), conj=True, pm="r1", name="R1v")
R2V = _g(conj=True, pm="r2", name="R2v")


@dataclass(frozen=True)
class ClassSpec:
    tag: str
    active: tuple
    sigma: int
    edge: str          # "beta1" or "beta2"
    real: bool
    charge: int

    def generators(self, sign=1):
        """Symmetries that leave a solution of this class invariant."""
        s = int(sign)
        t = self.tag
        if t == "A-m0":
            return [R1, R2, SW, K]
        if t == "A-m1":
            return [R1V, R2V, _g(mult=(1j, 1j, 1j), conj=True, pm="sw", name="Sv")]
        if t == "B-i-m0":
            return [R1, R2, K]
        if t == "B-i-m1":
            return [R1V, R2V]
        if t == "B-ii":
            return [R1, R2, K, _g(perm=(1, 0, 2), mult=(s, s, 1), pm="sw", name="S")]
        if t == "B-iii":
            return [R1, R2, _g(mult=(1, -1, 1), conj=True, name="K'"),
                    _g(perm=(1, 0, 2), mult=(-s * 1j, s * 1j, 1), pm="sw", name="S")]
        if t == "B-iv":
            return [R1V, R2V, _g(perm=(1, 0, 2), mult=(s * 1j, s * 1j, 1), conj=True, pm="sw",
                                 name="S")]
        return []

    def kernel_generators(self, sign=1):
        """Commuting involutions used to split the Jacobian into sectors."""
        t = self.tag
        if t in ("A-m0", "B-i-m0", "B-ii"):
            return [R1, R2, K]
        if t == "B-iii":
            return [R1, R2, _g(mult=(1, -1, 1), conj=True, name="K'")]
        if t in ("A-m1", "B-i-m1", "B-iv"):
            return [R1V, R2V]
        return []


CLASSES = {
    "A-m0": ClassSpec("A-m0", (2,), 1, "beta2", True, 0),
    "A-m1": ClassSpec("A-m1", (2,), 1, "beta2", False, 1),
    "B-i-m0": ClassSpec("B-i-m0", (0,), -1, "beta1", True, 0),
    "B-i-m1": ClassSpec("B-i-m1", (0,), -1, "beta1", False, 1),
    "B-ii": ClassSpec("B-ii", (0, 1), -1, "beta1", True, 0),
    "B-iii": ClassSpec("B-iii", (0, 1), -1, "beta1", False, 0),
    "B-iv": ClassSpec("B-iv", (0, 1), -1, "beta1", False, 1),
    "general": ClassSpec("general", (0, 1, 2), 1, "beta1", False, 0),
}


def class_spec(tag):
    try:
        return CLASSES[tag]
    except KeyError as exc:
        raise ValueError(f"unknown class tag {tag!r}") from exc


def symmetry_defect(f: CMEField, conjugations=True):
    """Largest relative violation of the class symmetries on the grid.

    With ``conjugations=False`` the generators involving complex conjugation
    are skipped. Those reverse time, so a rotating or evolving field keeps
    only the remaining ones.
    """
    spec = class_spec(f.class_tag)
    peak = np.max(np.abs(f.a))
    if peak == 0:
        return 0.0
    worst = 0.0
    for g in spec.generators(f.class_sign):
        if g.conj and not conjugations:
            continue
        worst = max(worst, float(np.max(np.abs(g.apply(f.a) - f.a)) / peak))
    inactive = [c for c in range(3) if c not in spec.active]
    for c in inactive:
        worst = max(worst, float(np.max(np.abs(f.a[c])) / peak))
    return worst


def check_symmetry(f: CMEField, tol=1e-8):
    d = symmetry_defect(f)
    if d > tol:
        raise SymmetryError(f"field violates {f.class_tag} symmetry by {d:.2e}")
    return d


def mean_alpha(coeffs):
    return 0.5 * (coeffs.alpha1 + coeffs.alpha2)


def seed_field(tag, Omega, coeffs, grid: CMEGrid, sign=1, dr=None):
    """Initial guess for Newton.

    One-component classes are exact continuum profiles sampled on the grid.
    Two-component classes are exact at alpha1 = alpha2 = abar and carry
    coefficients with that mean curvature; pass them to
    ``homotopy_continue`` afterwards.
    """
    spec = class_spec(tag)
    y1, y2 = grid.mesh()
    a = np.zeros((3, grid.n, grid.n), dtype=complex)
    cf = coeffs
    sigma = spec.sigma
    if tag in ("A-m0", "A-m1"):
        prof = solve_radial_profile("A", spec.charge, Omega, sigma, coeffs, dr=dr)
        sc = np.sqrt(abs(coeffs.alpha3))
        u, v = y1 / sc, y2 / sc
        r = np.hypot(u, v)
        a[2] = _with_phase(prof(r), u, v, r, spec.charge)
    elif tag in ("B-i-m0", "B-i-m1"):
        prof = solve_radial_profile("B-i", spec.charge, Omega, sigma, coeffs, dr=dr)
        u, v = y1 / np.sqrt(abs(coeffs.alpha1)), y2 / np.sqrt(abs(coeffs.alpha2))
        r = np.hypot(u, v)
        a[0] = _with_phase(prof(r), u, v, r, spec.charge)
    elif tag in ("B-ii", "B-iii", "B-iv"):
        abar = mean_alpha(coeffs)
        cf = coeffs.with_alphas(abar, abar)
        g1, g2 = coeffs.gamma1, coeffs.gamma2
        g_eff = g1 + g2 if tag == "B-iii" else g1 + 3.0 * g2
        delta = coeffs.beta1 - Omega
        prof = shoot_profile(delta, g_eff, spec.charge, dr=dr, class_tag=tag)
        u, v = y1 / np.sqrt(abar), y2 / np.sqrt(abar)
        r = np.hypot(u, v)
        base = _with_phase(prof(r), u, v, r, spec.charge)
        a[0] = base
        if tag == "B-ii":
            a[1] = sign * base.T
        elif tag == "B-iii":
            a[1] = -sign * 1j * base.T
        else:
            a[1] = sign * 1j * np.conj(base.T)
    else:
        raise ValueError("no seed for the general class; supply a field")
    return CMEField(a, grid, float(Omega), sigma, cf, tag, int(sign),
                    {"seed": True, "target_coeffs": coeffs.to_dict()} if cf is not coeffs else
                    {"seed": True})


def _with_phase(R, u, v, r, m):
    if m == 0:
        return R.astype(complex)
    with np.errstate(invalid="ignore", divide="ignore"):
        ph = np.where(r > 0, (u + 1j * v) / r, 0.0)
    return R * ph ** m
