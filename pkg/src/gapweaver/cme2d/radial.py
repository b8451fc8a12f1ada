"""Radial ground states and charge-m vortices by shooting.

With R(r) = r^m Q(r) the profile equation

    R'' + R'/r - m^2 R / r^2 - delta R + g R^3 = 0

becomes Q'' + (2m+1) Q'/r - delta Q + g r^(2m) Q^3 = 0, which is regular at
r = 0. The separatrix value Q(0) is found by bisection between undershoot
(Q turns back up) and overshoot (Q crosses zero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import kve

from .._accel import radial_rk4
from ..errors import NoLocalizedSolutionError, TailContaminationError

UNDER, OVER, NONE = 2, 1, 0


@dataclass
class RadialProfile:
    """Profile R on a radial grid in the scaled variable r of its ODE.

    ``kappa`` is the exponential decay rate sqrt(delta) in the same variable;
    beyond ``r_match`` the stored values come from the exact linear tail
    C K_m(kappa r).
    """

    r: np.ndarray
    R: np.ndarray
    m: int
    class_tag: str
    kappa: float
    q0: float
    delta: float
    g: float
    r_match: float
    tail_ok: bool
    tail_spread: float

    def __post_init__(self):
        cut = np.searchsorted(self.r, self.r_match, side="right")
        self._spline = CubicSpline(self.r[:cut], self.R[:cut])
        self._rm = float(self.r[cut - 1])
        self._Rm = float(self.R[cut - 1])
        self._cut = cut

    @property
    def peak(self):
        return float(np.max(self.R))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        inner = r <= self._rm
        out[inner] = self._spline(r[inner])
        outer = ~inner
        if np.any(outer):
            k = self.kappa
            # kve(m, x) = K_m(x) e^x, so the ratio stays finite far out
            ratio = kve(self.m, k * r[outer]) / kve(self.m, k * self._rm)
            out[outer] = self._Rm * ratio * np.exp(-k * (r[outer] - self._rm))
        return out


def _integrate(q0, delta, g, m, dr, r_max):
    steps = int(np.ceil(r_max / dr)) + 1
    q = np.zeros(steps)
    p = np.zeros(steps)
    code, last = radial_rk4(float(q0), float(delta), float(g), int(m), float(dr),
                            float(r_max), q, p)
    return int(code), int(last), q, p


def _initial_guess(m, delta, g):
    base = {0: 2.2062, 1: 1.2, 2: 0.6}.get(m, 0.5)
    return base * np.sqrt(delta / g) * delta ** (m / 2.0)


def shoot_profile(delta, g, m=0, r_max=None, dr=None, class_tag="normalized"):
    """Ground state (m=0) or charge-m vortex of the scaled radial NLS."""
    if not (delta > 0 and g > 0):
        raise NoLocalizedSolutionError(
            f"no decaying profile: need delta > 0 and g > 0 (got {delta:.4g}, {g:.4g})")
    if m < 0:
        m = -m
    kappa = np.sqrt(delta)
    r_max = 30.0 / kappa if r_max is None else float(r_max)
    dr = 0.004 / kappa if dr is None else float(dr)
    if r_max < 20 * dr:
        raise TailContaminationError("r_max is only a few steps long")

    def classify(q0):
        code, last, q, p = _integrate(q0, delta, g, m, dr, r_max)
        return code, last, q

    lo = 0.0
    hi = _initial_guess(m, delta, g)
    for _ in range(80):
        code, _, _ = classify(hi)
        if code == OVER:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NoLocalizedSolutionError("no overshooting amplitude found")
    while True:
        code, _, _ = classify(0.5 * hi)
        if code == OVER and hi > 1e-300:
            hi *= 0.5
            continue
        break
    if lo >= hi:
        lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        code, _, _ = classify(mid)
        if code == OVER:
            hi = mid
        else:
            lo = mid
    code_lo, last_lo, q_lo = classify(lo)
    code_hi, last_hi, q_hi = classify(hi)
    valid = min(last_lo, last_hi)
    r = dr * np.arange(q_lo.size)
    r[0] = 0.0
    q_peak = max(abs(hi), 1e-300)
    sep = np.flatnonzero(np.abs(q_hi[:valid + 1] - q_lo[:valid + 1]) > 1e-9 * q_peak)
    sep_i = int(sep[0]) if sep.size else valid
    qmid = 0.5 * (q_lo + q_hi)
    R = qmid * r ** m if m else qmid.copy()
    peak = np.max(np.abs(R[:sep_i + 1]))
    # match the linear tail well before the two trajectories part ways
    small = np.flatnonzero((np.abs(R[:sep_i + 1]) < 1e-4 * peak) & (r[:sep_i + 1] > 0))
    if small.size == 0:
        raise TailContaminationError(
            f"profile still at {abs(R[sep_i]) / peak:.1e} of its peak at r={r[sep_i]:.3g}; "
            f"increase r_max (now {r_max:.3g})")
    cut = int(small[0])
    # tail diagnostics: R sqrt(r) e^{kappa r} roughly constant over the decay
    ipk = int(np.argmax(np.abs(R[:cut + 1])))
    idx = np.arange(R.size)
    win = np.flatnonzero((np.abs(R) < 1e-2 * peak) & (idx <= cut) & (idx > ipk))
    if win.size > 3:
        c = np.abs(R[win]) * np.sqrt(r[win]) * np.exp(kappa * r[win])
        spread = float(np.ptp(c) / np.mean(c))
    else:
        spread = np.inf
    prof = RadialProfile(r[:cut + 1].copy(), R[:cut + 1].copy(), m, class_tag, float(kappa),
                         float(0.5 * (lo + hi)), float(delta), float(g), float(r[cut]),
                         bool(spread < 0.25), spread)
    # extend stored samples with the analytic tail out to r_max
    r_full = dr * np.arange(int(np.ceil(r_max / dr)) + 1)
    R_full = prof(r_full)
    if R_full[-1] > 1e-8 * peak:
        raise TailContaminationError(
            f"tail at r_max={r_max:.3g} is {R_full[-1] / peak:.1e} of the peak (> 1e-8)")
    prof.r, prof.R = r_full, R_full
    return prof


def townes_profile(m=0, r_max=30.0, dr=0.002):
    """Normalized ground state / vortex of S'' + S'/r - m^2 S/r^2 - S + S^3 = 0."""
    return shoot_profile(1.0, 1.0, m, r_max, dr, class_tag="normalized")


def class_scalars(class_name, Omega, sigma, coeffs):
    """(delta, g) for a one-component class.

    The ODE variable is r = |y|/sqrt|alpha3| for class A and
    r = sqrt(y1^2/|alpha1| + y2^2/|alpha2|) for class B-i.
    """
    if class_name == "A":
        alpha, beta, gamma = coeffs.alpha3, coeffs.beta2, coeffs.gamma4
    elif class_name == "B-i":
        if np.sign(coeffs.alpha1) != np.sign(coeffs.alpha2):
            raise NoLocalizedSolutionError("alpha1 and alpha2 differ in sign")
        alpha, beta, gamma = coeffs.alpha1, coeffs.beta1, coeffs.gamma1
    else:
        raise ValueError(f"radial profiles exist for classes A and B-i, not {class_name!r}")
    s = np.sign(alpha)
    delta = s * (beta - Omega)
    g = -s * sigma * gamma
    return float(delta), float(g)


def solve_radial_profile(class_name, m, Omega, sigma, coeffs, r_max=None, dr=None):
    """Radial profile for class A (isotropic) or B-i (ellipsoidal)."""
    if class_name == "A" and sigma != 1:
        raise NoLocalizedSolutionError("class A profiles need sigma = +1")
    if class_name == "B-i" and sigma != -1:
        raise NoLocalizedSolutionError("class B-i profiles need sigma = -1")
    delta, g = class_scalars(class_name, Omega, sigma, coeffs)
    if delta <= 0:
        edge = "beta2" if class_name == "A" else "beta1"
        raise NoLocalizedSolutionError(f"Omega={Omega} is on the wrong side of {edge}")
    return shoot_profile(delta, g, m, r_max, dr, class_tag=f"{class_name}-m{m}")
