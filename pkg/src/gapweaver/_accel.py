"""Hot loops with a numba path and a plain numpy path.

Set ``GAPWEAVER_NUMBA=0`` before import to force the numpy versions. Both
versions of every kernel are importable by name (``*_numba`` and
``*_numpy``) so the benchmark and the tests can compare them directly; the
unsuffixed name is whichever backend is active.
"""

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    import numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False

BACKEND = "numba" if (_HAVE_NUMBA and os.environ.get("GAPWEAVER_NUMBA", "1") != "0") else "numpy"


def _jit(fn):
    if _HAVE_NUMBA:
        return numba.njit(cache=True, fastmath=False)(fn)
    return fn


# ---------------------------------------------------------------------------
# radial shooting: Q'' + (2m+1)/r Q' - delta Q + g r^{2m} Q^3 = 0
# event codes: 0 reached r_max, 1 overshoot (Q < 0), 2 undershoot (Q turns up
# again after falling, or runs away)
# ---------------------------------------------------------------------------

def _radial_rhs(r, q, p, delta, g, m):
    rp = r ** (2 * m) if m > 0 else 1.0
    return p, -(2 * m + 1) / r * p + delta * q - g * rp * q * q * q


def _radial_rk4_loop(q0, delta, g, m, dr, r_max, out_q, out_p):
    n = out_q.shape[0]
    # series start at r = dr
    r = dr
    c2 = q0 * delta / (4.0 * (m + 1))
    if m == 0:
        c2 = q0 * (delta - g * q0 * q0) / 4.0
    q = q0 + c2 * r * r
    p = 2.0 * c2 * r
    out_q[0] = q0
    out_p[0] = 0.0
    out_q[1] = q
    out_p[1] = p
    code = 0
    last = 1
    falling = p < 0.0
    cap = 1e6 * abs(q0) + 1.0
    for i in range(1, n - 1):
        h = dr
        k1q = p
        rp = r ** (2 * m) if m > 0 else 1.0
        k1p = -(2 * m + 1) / r * p + delta * q - g * rp * q * q * q
        r2 = r + 0.5 * h
        q2 = q + 0.5 * h * k1q
        p2 = p + 0.5 * h * k1p
        rp = r2 ** (2 * m) if m > 0 else 1.0
        k2q = p2
        k2p = -(2 * m + 1) / r2 * p2 + delta * q2 - g * rp * q2 * q2 * q2
        q3 = q + 0.5 * h * k2q
        p3 = p + 0.5 * h * k2p
        k3q = p3
        k3p = -(2 * m + 1) / r2 * p3 + delta * q3 - g * rp * q3 * q3 * q3
        r4 = r + h
        q4 = q + h * k3q
        p4 = p + h * k3p
        rp = r4 ** (2 * m) if m > 0 else 1.0
        k4q = p4
        k4p = -(2 * m + 1) / r4 * p4 + delta * q4 - g * rp * q4 * q4 * q4
        q = q + h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        p = p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        r = r4
        out_q[i + 1] = q
        out_p[i + 1] = p
        last = i + 1
        if q < 0.0:
            code = 1
            break
        if p < 0.0:
            falling = True
        elif falling or q > cap:
            # turned back up after the core, or ran away: undershoot
            code = 2
            break
    return code, last


radial_rk4_numba = _jit(_radial_rk4_loop) if _HAVE_NUMBA else None


def radial_rk4_numpy(q0, delta, g, m, dr, r_max, out_q, out_p):
    """Same integrator as the compiled loop, run in the interpreter."""
    return _radial_rk4_loop(float(q0), float(delta), float(g), int(m), float(dr),
                            float(r_max), out_q, out_p)


# ---------------------------------------------------------------------------
# cubic coupled-mode nonlinearity
# ---------------------------------------------------------------------------

def cubic_terms_numpy(a1, a2, a3, g1, g2, g3, g4):
    """Return (N1, N2, N3), the derivative of the quartic energy in conj(A)."""
    m1 = a1.real ** 2 + a1.imag ** 2
    m2 = a2.real ** 2 + a2.imag ** 2
    m3 = a3.real ** 2 + a3.imag ** 2
    c1 = np.conj(a1)
    c2 = np.conj(a2)
    c3 = np.conj(a3)
    n1 = g1 * m1 * a1 + g2 * (2 * m2 * a1 + a2 * a2 * c1) + g3 * (2 * m3 * a1 + a3 * a3 * c1)
    n2 = g1 * m2 * a2 + g2 * (2 * m1 * a2 + a1 * a1 * c2) + g3 * (2 * m3 * a2 + a3 * a3 * c2)
    n3 = g4 * m3 * a3 + 2 * g3 * (m1 + m2) * a3 + g3 * (a1 * a1 + a2 * a2) * c3
    return n1, n2, n3


def _cubic_point(x1, x2, x3, g1, g2, g3, g4):
    m1 = x1.real * x1.real + x1.imag * x1.imag
    m2 = x2.real * x2.real + x2.imag * x2.imag
    m3 = x3.real * x3.real + x3.imag * x3.imag
    c1 = x1.conjugate()
    c2 = x2.conjugate()
    c3 = x3.conjugate()
    n1 = g1 * m1 * x1 + g2 * (2 * m2 * x1 + x2 * x2 * c1) + g3 * (2 * m3 * x1 + x3 * x3 * c1)
    n2 = g1 * m2 * x2 + g2 * (2 * m1 * x2 + x1 * x1 * c2) + g3 * (2 * m3 * x2 + x3 * x3 * c2)
    n3 = g4 * m3 * x3 + 2 * g3 * (m1 + m2) * x3 + g3 * (x1 * x1 + x2 * x2) * c3
    return n1, n2, n3


def _midpoint_loop(a1, a2, a3, g1, g2, g3, g4, coef, tol, max_iter):
    # implicit midpoint for dA/dt = coef * N(A), solved pointwise by fixed point
    worst = 0
    n = a1.shape[0]
    for k in range(n):
        y1 = a1[k]
        y2 = a2[k]
        y3 = a3[k]
        z1 = y1
        z2 = y2
        z3 = y3
        it = 0
        while it < max_iter:
            m1 = 0.5 * (y1 + z1)
            m2 = 0.5 * (y2 + z2)
            m3 = 0.5 * (y3 + z3)
            n1, n2, n3 = _cubic_point(m1, m2, m3, g1, g2, g3, g4)
            w1 = y1 + coef * n1
            w2 = y2 + coef * n2
            w3 = y3 + coef * n3
            d = abs(w1 - z1) + abs(w2 - z2) + abs(w3 - z3)
            z1 = w1
            z2 = w2
            z3 = w3
            it += 1
            if d <= tol * (1.0 + abs(z1) + abs(z2) + abs(z3)):
                break
        if it > worst:
            worst = it
        a1[k] = z1
        a2[k] = z2
        a3[k] = z3
    return worst


if _HAVE_NUMBA:
    _cubic_point_jit = numba.njit(cache=True)(_cubic_point)

    @numba.njit(cache=True)
    def _midpoint_numba_impl(a1, a2, a3, g1, g2, g3, g4, coef, tol, max_iter):
        worst = 0
        n = a1.shape[0]
        for k in range(n):
            y1 = a1[k]
            y2 = a2[k]
            y3 = a3[k]
            z1 = y1
            z2 = y2
            z3 = y3
            it = 0
            while it < max_iter:
                n1, n2, n3 = _cubic_point_jit(0.5 * (y1 + z1), 0.5 * (y2 + z2),
                                              0.5 * (y3 + z3), g1, g2, g3, g4)
                w1 = y1 + coef * n1
                w2 = y2 + coef * n2
                w3 = y3 + coef * n3
                d = abs(w1 - z1) + abs(w2 - z2) + abs(w3 - z3)
                z1 = w1
                z2 = w2
                z3 = w3
                it += 1
                if d <= tol * (1.0 + abs(z1) + abs(z2) + abs(z3)):
                    break
            if it > worst:
                worst = it
            a1[k] = z1
            a2[k] = z2
            a3[k] = z3
        return worst

    def cubic_midpoint_numba(a1, a2, a3, g, coef, tol=1e-14, max_iter=60):
        return _midpoint_numba_impl(a1, a2, a3, g[0], g[1], g[2], g[3], complex(coef),
                                    tol, max_iter)
else:  # pragma: no cover
    cubic_midpoint_numba = None


def cubic_midpoint_numpy(a1, a2, a3, g, coef, tol=1e-14, max_iter=60):
    """Vectorized implicit midpoint step, same contract as the compiled one.

    Arrays are 1-D complex and are overwritten in place. Returns the number of
    fixed-point sweeps used.
    """
    y1, y2, y3 = a1.copy(), a2.copy(), a3.copy()
    z1, z2, z3 = y1.copy(), y2.copy(), y3.copy()
    it = 0
    while it < max_iter:
        n1, n2, n3 = cubic_terms_numpy(0.5 * (y1 + z1), 0.5 * (y2 + z2), 0.5 * (y3 + z3), *g)
        w1, w2, w3 = y1 + coef * n1, y2 + coef * n2, y3 + coef * n3
        d = np.abs(w1 - z1) + np.abs(w2 - z2) + np.abs(w3 - z3)
        z1, z2, z3 = w1, w2, w3
        it += 1
        if np.all(d <= tol * (1.0 + np.abs(z1) + np.abs(z2) + np.abs(z3))):
            break
    a1[:] = z1
    a2[:] = z2
    a3[:] = z3
    return it


# ---------------------------------------------------------------------------
# Gross-Pitaevskii potential + cubic phase: E <- E exp(-i dt (V + s|E|^2))
# ---------------------------------------------------------------------------

def gp_phase_numpy(e, v, sigma, dt):
    e *= np.exp(-1j * dt * (v + sigma * (e.real ** 2 + e.imag ** 2)))
    return e


if _HAVE_NUMBA:
    @numba.njit(cache=True)
    def _gp_phase_impl(e, v, sigma, dt):
        for k in range(e.shape[0]):
            x = e[k]
            th = -dt * (v[k] + sigma * (x.real * x.real + x.imag * x.imag))
            e[k] = x * complex(np.cos(th), np.sin(th))

    def gp_phase_numba(e, v, sigma, dt):
        _gp_phase_impl(e.reshape(-1), v.reshape(-1), float(sigma), float(dt))
        return e
else:  # pragma: no cover
    gp_phase_numba = None


if BACKEND == "numba":
    radial_rk4 = radial_rk4_numba
    cubic_midpoint = cubic_midpoint_numba
    gp_phase = gp_phase_numba
else:
    radial_rk4 = radial_rk4_numpy
    cubic_midpoint = cubic_midpoint_numpy
    gp_phase = gp_phase_numpy

cubic_terms = cubic_terms_numpy
