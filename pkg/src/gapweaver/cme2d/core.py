"""Grid, field container, residual and realified Jacobian of the stationary CME.

Stationary system, for components j = 1, 2, 3:

    (Omega - beta_j) A_j + (a_j1 d_y1^2 + a_j2 d_y2^2) A_j = sigma N_j(A)

with (a_11, a_12) = (alpha1, alpha2), (a_21, a_22) = (alpha2, alpha1),
a_31 = a_32 = alpha3, and N = dH/d conj(A) for the quartic energy H. Fields
live on the interior nodes of [-D, D]^2 with zero Dirichlet data.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .. import io as gio
from .._accel import cubic_terms
from ..errors import FormatError, InvalidGridError
from ..resonance import ResonanceCoefficients

CLASS_TAGS = ("A-m0", "A-m1", "B-i-m0", "B-i-m1", "B-ii", "B-iii", "B-iv", "general")

_STENCILS = {
    2: (np.array([1.0, -2.0, 1.0]), 1),
    4: (np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0, 2),
}
_FIRST = {
    2: (np.array([-0.5, 0.0, 0.5]), 1),
    4: (np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0, 2),
}


@dataclass(frozen=True)
class CMEGrid:
    """Interior nodes y_j = -D + j dy, j = 1..2m-1; the origin is node m-1."""

    D: float
    m: int
    order: int = 4

    @classmethod
    def from_spacing(cls, D, dy, order=4):
        if D <= 0 or dy <= 0:
            raise InvalidGridError("D and dy must be positive")
        m = max(int(round(D / dy)), 3)
        if order not in _STENCILS:
            raise InvalidGridError(f"unsupported finite-difference order {order}")
        return cls(float(D), m, order)

    @property
    def dy(self):
        return self.D / self.m

    @property
    def n(self):
        return 2 * self.m - 1

    @property
    def size(self):
        return self.n * self.n

    @property
    def y(self):
        return -self.D + self.dy * np.arange(1, 2 * self.m)

    @property
    def center(self):
        return self.m - 1

    def mesh(self):
        return np.meshgrid(self.y, self.y, indexing="ij")

    def d2_matrix(self):
        return _d2_matrix(self.n, self.dy, self.order)

    def d1_matrix(self):
        return _d1_matrix(self.n, self.dy, self.order)

    def laplacians(self):
        """(d^2/dy1^2, d^2/dy2^2) on the flattened row-major [i1, i2] grid."""
        return _laplacians(self.n, self.dy, self.order)

    def derivative(self, u, axis):
        """First derivative along an axis with the same order as the Laplacian."""
        d1 = self.d1_matrix()
        if axis == 0:
            return d1 @ u
        return (d1 @ u.T).T

    def with_box(self, D):
        return CMEGrid.from_spacing(D, self.dy, self.order)


def _band_matrix(n, stencil, half, scale):
    diags = [np.full(n - abs(o), c * scale) for o, c in zip(range(-half, half + 1), stencil)
             if c != 0.0]
    offs = [o for o, c in zip(range(-half, half + 1), stencil) if c != 0.0]
    return sp.diags(diags, offs, shape=(n, n), format="csr")


@lru_cache(maxsize=16)
def _d2_matrix(n, dy, order):
    st, half = _STENCILS[order]
    return _band_matrix(n, st, half, 1.0 / dy ** 2)


@lru_cache(maxsize=16)
def _d1_matrix(n, dy, order):
    st, half = _FIRST[order]
    return _band_matrix(n, st, half, 1.0 / dy)


@lru_cache(maxsize=8)
def _laplacians(n, dy, order):
    t = _d2_matrix(n, dy, order)
    eye = sp.identity(n, format="csr")
    return sp.kron(t, eye, format="csr"), sp.kron(eye, t, format="csr")


@dataclass
class CMEField:
    """Three complex envelopes on a square grid plus the problem parameters."""

    a: np.ndarray  # (3, n, n) complex
    grid: CMEGrid
    omega: float
    sigma: int
    coeffs: ResonanceCoefficients
    class_tag: str = "general"
    class_sign: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=complex)
        n = self.grid.n
        if self.a.shape != (3, n, n):
            raise InvalidGridError(f"field shape {self.a.shape} does not match grid ({n}x{n})")
        if self.sigma not in (1, -1):
            raise ValueError("sigma must be +1 or -1")
        if self.class_tag not in CLASS_TAGS:
            raise ValueError(f"unknown class tag {self.class_tag!r}")

    a1 = property(lambda self: self.a[0])
    a2 = property(lambda self: self.a[1])
    a3 = property(lambda self: self.a[2])
    D = property(lambda self: self.grid.D)
    dy = property(lambda self: self.grid.dy)

    def copy(self, **changes):
        out = replace(self, a=self.a.copy(), meta=dict(self.meta))
        for k, v in changes.items():
            setattr(out, k, v)
        return out

    def amplitude(self):
        """max over the grid of sqrt(|A1|^2 + |A2|^2 + |A3|^2)."""
        return float(np.sqrt(np.max(np.sum(np.abs(self.a) ** 2, axis=0))))

    def boundary_ratio(self):
        """Largest modulus on the outermost ring relative to the peak."""
        mod = np.abs(self.a).max(axis=0)
        ring = np.concatenate([mod[0], mod[-1], mod[:, 0], mod[:, -1]])
        peak = mod.max()
        return float(ring.max() / peak) if peak > 0 else 0.0

    def power(self):
        return float(np.sum(np.abs(self.a) ** 2) * self.grid.dy ** 2)

    # -- persistence ----------------------------------------------------------
    def header(self):
        return {"D": self.grid.D, "dy": self.grid.dy, "m": self.grid.m, "order": self.grid.order,
                "omega": self.omega, "sigma": self.sigma, "class_tag": self.class_tag,
                "class_sign": self.class_sign, "components": 3, "layout": "row-major",
                "scalar": "complex128-interleaved", "shape": [3, self.grid.n, self.grid.n],
                "coeffs": self.coeffs.to_dict(), "meta": self.meta}

    def save(self, path):
        return gio.write_payload(path, self.header(), self.a)

    @classmethod
    def load(cls, path):
        head, arr = gio.read_payload(path, complex_=True)
        try:
            grid = CMEGrid(float(head["D"]), int(head["m"]), int(head.get("order", 4)))
            shape = tuple(head["shape"])
            if shape != (3, grid.n, grid.n):
                raise FormatError(f"{path}: shape {shape} inconsistent with grid")
            return cls(arr.reshape(shape), grid, float(head["omega"]), int(head["sigma"]),
                       ResonanceCoefficients.from_dict(head["coeffs"]), head["class_tag"],
                       int(head.get("class_sign", 1)), dict(head.get("meta", {})))
        except KeyError as exc:
            raise FormatError(f"{path}: header lacks {exc}") from exc


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def linear_operators(grid: CMEGrid, coeffs: ResonanceCoefficients, omega):
    """Sparse (Omega - beta_j) + alpha-weighted Laplacian for each component."""
    dxx, dyy = grid.laplacians()
    eye = sp.identity(grid.size, format="csr")
    ops = []
    for (ax, ay), beta in zip(coeffs.component_alphas(), coeffs.component_betas()):
        ops.append((ax * dxx + ay * dyy + (omega - beta) * eye).tocsr())
    return ops


def residual(f: CMEField):
    """Discrete residual F(A) of the stationary system, shape (3, n, n)."""
    n = f.grid.n
    ops = linear_operators(f.grid, f.coeffs, f.omega)
    nl = cubic_terms(f.a[0], f.a[1], f.a[2], *f.coeffs.gammas)
    out = np.empty_like(f.a)
    for j in range(3):
        out[j] = (ops[j] @ f.a[j].ravel()).reshape(n, n) - f.sigma * nl[j]
    return out


def residual_norm(f: CMEField):
    return float(np.max(np.abs(residual(f))))


def nonlinear_derivatives(a, gammas):
    """P[i][j] = dN_i/dA_j and Q[i][j] = dN_i/d conj(A_j), pointwise arrays."""
    g1, g2, g3, g4 = gammas
    a1, a2, a3 = a
    m1, m2, m3 = (np.abs(x) ** 2 for x in a)
    c1, c2, c3 = (np.conj(x) for x in a)
    p = [[None] * 3 for _ in range(3)]
    q = [[None] * 3 for _ in range(3)]
    p[0][0] = 2 * (g1 * m1 + g2 * m2 + g3 * m3) + 0j
    q[0][0] = g1 * a1 ** 2 + g2 * a2 ** 2 + g3 * a3 ** 2
    p[1][1] = 2 * (g1 * m2 + g2 * m1 + g3 * m3) + 0j
    q[1][1] = g1 * a2 ** 2 + g2 * a1 ** 2 + g3 * a3 ** 2
    p[2][2] = 2 * g4 * m3 + 2 * g3 * (m1 + m2) + 0j
    q[2][2] = g4 * a3 ** 2 + g3 * (a1 ** 2 + a2 ** 2)
    p[0][1] = 2 * g2 * (c2 * a1 + a2 * c1)
    q[0][1] = 2 * g2 * a1 * a2
    p[0][2] = 2 * g3 * (c3 * a1 + a3 * c1)
    q[0][2] = 2 * g3 * a1 * a3
    p[1][2] = 2 * g3 * (c3 * a2 + a3 * c2)
    q[1][2] = 2 * g3 * a2 * a3
    for i, j in ((1, 0), (2, 0), (2, 1)):
        p[i][j] = np.conj(p[j][i])
        q[i][j] = q[j][i]
    return p, q


def realify(a, active):
    """Stack (Re A_c, Im A_c) for the active components into one real vector."""
    parts = []
    for c in active:
        parts += [a[c].real.ravel(), a[c].imag.ravel()]
    return np.concatenate(parts)


def complexify(x, active, n):
    a = np.zeros((3, n, n), dtype=complex)
    size = n * n
    for s, c in enumerate(active):
        a[c] = (x[2 * s * size:(2 * s + 1) * size] + 1j * x[(2 * s + 1) * size:(2 * s + 2) * size]
                ).reshape(n, n)
    return a


def realified_jacobian(f: CMEField, active=(0, 1, 2)):
    """Sparse symmetric realified Jacobian restricted to the active components."""
    size = f.grid.size
    ops = linear_operators(f.grid, f.coeffs, f.omega)
    p, q = nonlinear_derivatives(f.a, f.coeffs.gammas)
    nb = 2 * len(active)
    blocks = [[None] * nb for _ in range(nb)]
    s = -float(f.sigma)
    for bi, ci in enumerate(active):
        for bj, cj in enumerate(active):
            pp, qq = p[ci][cj].ravel(), q[ci][cj].ravel()
            sub = ((pp.real + qq.real, -pp.imag + qq.imag),
                   (pp.imag + qq.imag, pp.real - qq.real))
            for r in range(2):
                for c in range(2):
                    vals = s * sub[r][c]
                    blk = sp.diags(vals, 0, format="csr") if np.any(vals) else None
                    if bi == bj and r == c:
                        blk = ops[ci] if blk is None else ops[ci] + blk
                    blocks[2 * bi + r][2 * bj + c] = blk
    for i in range(nb):
        if all(b is None for b in blocks[i]):
            blocks[i][i] = sp.csr_matrix((size, size))
    return sp.bmat(blocks, format="csr")
