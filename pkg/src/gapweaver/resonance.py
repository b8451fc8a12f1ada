"""Gap opening, coupled-mode coefficients and the non-resonance check."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import bloch1d
from .errors import (DegeneracyError, DegenerateCoefficientError, NoBifurcationError,
                     NumericalFailure)
from .potential import PeriodicPotential, sample_potential

ROOT_TOL = 1e-10
BISECT_WIDTH = 1e-6


# ---------------------------------------------------------------------------
# bifurcation value
# ---------------------------------------------------------------------------

def gap_function(p, eta, grid_n=bloch1d.DEFAULT_GRID_N, richardson=True):
    """g(eta) = lambda_1 + mu_2 - 2 mu_1."""
    lam, mu = _edges(p, eta, grid_n, richardson)
    return float(lam[0] + mu[1] - 2.0 * mu[0])


def _edges(p, eta, grid_n, richardson):
    def one(n):
        lam = bloch1d.solve_sturm_liouville(p, eta, 0.0, 3, n)[0]
        mu = bloch1d.solve_sturm_liouville(p, eta, 0.5, 3, n)[0]
        return np.concatenate([lam, mu])

    v = (4.0 * one(2 * grid_n) - one(grid_n)) / 3.0 if richardson else one(grid_n)
    return v[:3], v[3:]


def find_bifurcation_eta(p, bracket=(0.05, 0.5), grid_n=bloch1d.DEFAULT_GRID_N,
                         richardson=True):
    """Root of g on ``bracket``: bisection down to width 1e-6, then secant.

    Returns (eta0, omega0) with omega0 = 2 mu_1(eta0).
    """
    lo, hi = map(float, bracket)
    glo = gap_function(p, lo, grid_n, richardson)
    ghi = gap_function(p, hi, grid_n, richardson)
    if glo == 0.0:
        hi, ghi = lo, glo
    elif ghi == 0.0:
        lo, glo = hi, ghi
    elif np.sign(glo) == np.sign(ghi):
        _, mu_lo = _edges(p, lo, grid_n, richardson)
        _, mu_hi = _edges(p, hi, grid_n, richardson)
        if max(mu_lo[1] - mu_lo[0], mu_hi[1] - mu_hi[0]) < 1e-10:
            raise NoBifurcationError(
                "mu_1 = mu_2 across the bracket: the potential never splits the "
                "antiperiodic pair, so no gap can open")
        raise NoBifurcationError(f"g has no sign change on [{lo}, {hi}] "
                                 f"(g = {glo:.3e}, {ghi:.3e})")
    while hi - lo > BISECT_WIDTH:
        mid = 0.5 * (lo + hi)
        gm = gap_function(p, mid, grid_n, richardson)
        if gm == 0.0:
            lo = hi = mid
            glo = ghi = 0.0
            break
        if np.sign(gm) == np.sign(glo):
            lo, glo = mid, gm
        else:
            hi, ghi = mid, gm
    # secant polish, kept inside the certified bracket
    a, ga, b, gb = lo, glo, hi, ghi
    eta = a if abs(ga) < abs(gb) else b
    g = min(ga, gb, key=abs)
    for _ in range(30):
        if abs(g) <= ROOT_TOL or gb == ga:
            break
        c = b - gb * (b - a) / (gb - ga)
        if not lo - BISECT_WIDTH <= c <= hi + BISECT_WIDTH:
            c = 0.5 * (lo + hi)
        gc = gap_function(p, c, grid_n, richardson)
        a, ga, b, gb = b, gb, c, gc
        eta, g = c, gc
    if abs(g) > ROOT_TOL:
        raise NumericalFailure(f"secant stalled at |g| = {abs(g):.2e}", residual=abs(g))
    _, mu = _edges(p, eta, grid_n, richardson)
    return float(eta), float(2.0 * mu[0])


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResonanceCoefficients:
    eta0: float
    omega0: float
    beta1: float
    beta2: float
    gamma1: float
    gamma2: float
    gamma3: float
    gamma4: float
    alpha1: float
    alpha2: float
    alpha3: float
    provenance: dict = field(default_factory=dict, compare=False)

    @property
    def gammas(self):
        return (self.gamma1, self.gamma2, self.gamma3, self.gamma4)

    def component_alphas(self):
        """Per-component (alpha along y1, alpha along y2)."""
        return ((self.alpha1, self.alpha2), (self.alpha2, self.alpha1),
                (self.alpha3, self.alpha3))

    def component_betas(self):
        return (self.beta1, self.beta1, self.beta2)

    def with_alphas(self, alpha1, alpha2):
        return replace(self, alpha1=float(alpha1), alpha2=float(alpha2))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = [f for f in cls.__dataclass_fields__ if f != "provenance"]
        return cls(**{k: float(d[k]) for k in names}, provenance=dict(d.get("provenance", {})))


def _integrals(p, eta0, grid_n):
    efs = bloch1d.edge_eigenfunctions(p, eta0, 3, grid_n)
    psi1, phi1, phi2 = efs.psi[:, 0], efs.phi[:, 0], efs.phi[:, 1]
    drift = max(abs(efs.inner(v, v) - 1.0) for v in (psi1, phi1, phi2))
    if drift > 1e-6:
        raise NumericalFailure(f"eigenfunction normalization drift {drift:.2e}", residual=drift)
    w = sample_potential(p, grid_n)
    w = np.concatenate([w, w])  # 4pi cell starting at -2pi shares the 2pi samples
    ip = efs.inner
    b1 = ip(psi1, w * psi1) + ip(phi2, w * phi2)
    b2 = 2.0 * ip(phi1, w * phi1)
    s1, s2, s3 = psi1 ** 2, phi2 ** 2, phi1 ** 2
    g1 = ip(s1, s1) * ip(s2, s2)
    g2 = ip(s1, s2) ** 2
    g3 = ip(s1, s3) * ip(s3, s2)
    g4 = ip(s3, s3) ** 2
    return np.array([b1, b2, g1, g2, g3, g4])


def compute_coefficients(p, eta0=None, grid_n=bloch1d.DEFAULT_GRID_N, richardson=True,
                         curvature_step=0.01, bracket=(0.05, 0.5)):
    """All eleven coupled-mode constants at eta0 (located first if not given)."""
    if eta0 is None:
        eta0, _ = find_bifurcation_eta(p, bracket, grid_n, richardson)
    lam, mu = _edges(p, eta0, grid_n, richardson)
    omega0 = float(2.0 * mu[0])
    if richardson:
        vals = (4.0 * _integrals(p, eta0, 2 * grid_n) - _integrals(p, eta0, grid_n)) / 3.0
    else:
        vals = _integrals(p, eta0, grid_n)
    a1 = 0.5 * bloch1d.band_curvature(p, eta0, 1, 0.0, grid_n, curvature_step, richardson)
    a2 = 0.5 * bloch1d.band_curvature(p, eta0, 2, 0.5, grid_n, curvature_step, richardson)
    a3 = 0.5 * bloch1d.band_curvature(p, eta0, 1, 0.5, grid_n, curvature_step, richardson)
    prov = {"grid_n": grid_n, "richardson": bool(richardson), "root_tol": ROOT_TOL,
            "curvature_step": curvature_step, "potential": p.to_dict(),
            "potential_hash": p.digest(), "resonance_residual": float(lam[0] + mu[1] - omega0)}
    return ResonanceCoefficients(float(eta0), omega0, *map(float, vals), float(a1), float(a2),
                                 float(a3), provenance=prov)


def linear_band_shift(p, eta0, n, k0, grid_n=bloch1d.DEFAULT_GRID_N, richardson=True):
    """d rho_n / d eta at a band edge, as <u_n, W u_n> (Feynman-Hellmann)."""
    k0 = bloch1d._is_edge(k0)
    if k0 is None:
        raise ValueError("k0 must be 0 or 1/2")

    def at(gn):
        rho, us = bloch1d.solve_sturm_liouville(p, eta0, k0, n + 1, gn, return_vectors=True)
        gaps = np.abs(np.diff(rho))
        neighbours = [gaps[n - 1]] + ([gaps[n - 2]] if n >= 2 else [])
        if min(neighbours) <= 1e-8:
            raise DegeneracyError(f"eigenvalue {n} at k0={k0} is degenerate")
        u = us[:, n - 1]
        w = sample_potential(p, gn)
        return float(np.sum(u * w * u) / np.sum(u * u))

    return bloch1d._richardson(at, grid_n) if richardson else at(grid_n)


# ---------------------------------------------------------------------------
# resonant triple and gap interval
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResonantTriple:
    """Phi_1 = psi_1 phi_2, Phi_2 = phi_2 psi_1, Phi_3 = phi_1 phi_1 (tensor products)."""

    efs: bloch1d.EdgeEigenfunctions

    def factors(self):
        e = self.efs
        psi1, phi1, phi2 = e.psi[:, 0], e.phi[:, 0], e.phi[:, 1]
        return ((psi1, phi2), (phi2, psi1), (phi1, phi1))

    def gram(self):
        """4pi x 4pi Gram matrix; separable, so it factors into 1D integrals."""
        ip = self.efs.inner
        f = self.factors()
        g = np.empty((3, 3))
        for i, j in itertools.product(range(3), repeat=2):
            g[i, j] = ip(f[i][0], f[j][0]) * ip(f[i][1], f[j][1])
        return g

    def orthogonality_error(self):
        return float(np.max(np.abs(self.gram() - np.eye(3))))

    def mode(self, j, x1, x2):
        """Phi_j evaluated on the tensor grid x1 x x2 (j = 1, 2, 3)."""
        names = {1: (("psi", 1), ("phi", 2)), 2: (("phi", 2), ("psi", 1)),
                 3: (("phi", 1), ("phi", 1))}[j]
        a = self.efs.evaluate(names[0][0], names[0][1], x1)
        b = self.efs.evaluate(names[1][0], names[1][1], x2)
        return np.multiply.outer(a, b)


@dataclass(frozen=True)
class GapInterval:
    omega_lo: float
    omega_hi: float
    Omega_lo: float
    Omega_hi: float


def gap_interval(c: ResonanceCoefficients, eps: float):
    """Gap between the three resonant band surfaces at eta = eta0 + eps, or None.

    X-type points carry curvatures (alpha1, alpha2) and level eps*beta1; the
    M point carries alpha3 and eps*beta2. A gap needs opposite curvature
    signs with the levels ordered so the surfaces open away from each other.
    """
    if eps == 0.0:
        return None
    a, b = eps * c.beta1, eps * c.beta2
    x_up = c.alpha1 > 0 and c.alpha2 > 0
    x_down = c.alpha1 < 0 and c.alpha2 < 0
    if x_up and c.alpha3 < 0 and a > b:
        lo, hi = b, a
    elif x_down and c.alpha3 > 0 and a < b:
        lo, hi = a, b
    else:
        return None
    om = sorted((lo / eps, hi / eps))
    return GapInterval(c.omega0 + lo, c.omega0 + hi, om[0], om[1])


# ---------------------------------------------------------------------------
# algebraic coupled-mode reductions
# ---------------------------------------------------------------------------

def solve_algebraic_cme(c: ResonanceCoefficients, Omega, sigma, reduction):
    """Closed-form amplitudes of the constant-envelope reductions.

    Returns a list with one dict of |A_j|^2 values, or an empty list when the
    reduction has no real solution at this (Omega, sigma).
    """
    if sigma not in (1, -1):
        raise ValueError("sigma must be +1 or -1")
    if reduction == "A-only":
        gam, num, comps = c.gamma4, Omega - c.beta2, (3,)
    elif reduction == "single":
        gam, num, comps = c.gamma1, Omega - c.beta1, (1,)
    elif reduction == "B-only":
        gam, num, comps = c.gamma1 + 3.0 * c.gamma2, Omega - c.beta1, (1, 2)
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    if gam == 0.0:
        raise DegenerateCoefficientError(f"vanishing cubic coefficient for {reduction}")
    val = num / (sigma * gam)
    if val < 0:
        return []
    out = {"|A1|^2": 0.0, "|A2|^2": 0.0, "|A3|^2": 0.0}
    for j in comps:
        out[f"|A{j}|^2"] = float(val)
    return [out]


# ---------------------------------------------------------------------------
# non-resonance
# ---------------------------------------------------------------------------

J_VALUES = (-5, -3, -1, 1, 3, 5)
M_MAX = 5  # only |j1 + j2 + j3| <= 5 enters the condition
DIRECT_RESONANCES = ((1, 0.0, 2, 0.5, 1), (2, 0.5, 1, 0.0, 1), (1, 0.5, 1, 0.5, 1))


def _reduce_k(k):
    """Map a quasi-momentum into [-1/2, 1/2) using 1-periodicity of the bands."""
    r = (k + 0.5) % 1.0 - 0.5
    return 0.0 if abs(r) < 1e-14 else r


@dataclass
class NonresonanceReport:
    minimum: float
    attaining: tuple
    excluded: list
    n_max: int
    n_star: int
    certified: bool
    status: str
    growth_constant: float
    shift: float
    tuples_checked: int = 0

    def to_dict(self):
        return asdict(self)


def check_nonresonance(p, eta0, omega0, n_max=20, grid_n=bloch1d.DEFAULT_GRID_N, shift=1.0):
    """Finite-index infimum of |rho_n1(k1) + rho_n2(k2) - |j1+j2+j3| omega0| plus a tail bound.

    k1 = (j2+j3)/2 and k2 = (j1+j3)/2 are reduced into the Brillouin zone and
    only triples with |j1+j2+j3| <= 5 count. Since every j is odd, both
    quasi-momenta reduce to 0; the exclusion list is still checked so that
    the report shows which combinations were dropped.
    """
    cache = {}

    def bands_at(k):
        key = round(abs(k), 12)
        if key not in cache:
            lo = bloch1d.solve_sturm_liouville(p, eta0, abs(k), n_max, grid_n)[0]
            hi = bloch1d.solve_sturm_liouville(p, eta0, abs(k), n_max, 2 * grid_n)[0]
            cache[key] = (4.0 * hi - lo) / 3.0
        return cache[key]

    best = (math.inf, None)
    excluded = []
    checked = 0
    ms = set()
    for j1, j2, j3 in itertools.product(J_VALUES, repeat=3):
        k1, k2 = _reduce_k((j2 + j3) / 2.0), _reduce_k((j1 + j3) / 2.0)
        m = abs(j1 + j2 + j3)
        if m > M_MAX:
            continue
        ms.add(m)
        r1, r2 = bands_at(k1), bands_at(k2)
        vals = np.abs(r1[:, None] + r2[None, :] - m * omega0)
        for n1, n2 in itertools.product(range(n_max), repeat=2):
            tup = (n1 + 1, abs(k1), n2 + 1, abs(k2), m)
            if tup in DIRECT_RESONANCES:
                excluded.append(tup + (j1, j2, j3))
                continue
            checked += 1
            if vals[n1, n2] < best[0]:
                best = (float(vals[n1, n2]), (n1 + 1, k1, n2 + 1, k2, j1, j2, j3))
    # tail: rho_n(k) >= C n^2 - shift for every computed band, assumed beyond
    allb = np.vstack(list(cache.values()))
    n = np.arange(1, n_max + 1)
    growth = float(np.min((allb + shift) / n ** 2))
    rho_min = float(allb.min())
    top = max(ms) * omega0
    need = best[0] + top - rho_min + shift
    n_star = int(math.ceil(math.sqrt(max(need, 0.0) / growth))) if growth > 0 else 10 ** 9
    certified = best[0] > 0 and n_star <= n_max
    status = "certified" if certified else "inconclusive"
    return NonresonanceReport(best[0], best[1], excluded, n_max, n_star, certified, status,
                              growth, shift, checked)
