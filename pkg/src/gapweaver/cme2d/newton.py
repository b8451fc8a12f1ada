"""Newton iteration, curvature homotopy and frequency continuation for the CME."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import ConvergenceError, SingularSystemError, SymmetryError
from .classes import check_symmetry, class_spec, mean_alpha, seed_field
from .core import (CMEField, CMEGrid, complexify, realified_jacobian, realify, residual)
from .symmetry import generate_group, sector_basis

log = logging.getLogger(__name__)

PERMC = "MMD_AT_PLUS_A"


def factorize(a):
    """Sparse LU with a fill-reducing ordering that suits 2D stencils."""
    try:
        return spla.splu(sp.csc_matrix(a), permc_spec=PERMC)
    except RuntimeError as exc:
        raise SingularSystemError(f"sparse LU failed: {exc}") from exc


_BASIS_CACHE = {}


def solution_basis(tag, sign, grid: CMEGrid, active):
    """Orthonormal basis of the fully symmetric sector for a class (cached)."""
    key = ("sol", tag, sign, grid.n, tuple(active))
    if key not in _BASIS_CACHE:
        gens = class_spec(tag).generators(sign)
        if not gens:
            return None
        elems = generate_group(gens, active, grid.n)
        if len(_BASIS_CACHE) > 8:
            _BASIS_CACHE.clear()
        _BASIS_CACHE[key] = sector_basis(elems)
    return _BASIS_CACHE[key]


@dataclass
class NewtonReport:
    iterations: int
    history: list = field(default_factory=list)
    unknowns: int = 0


def _phase_pin(f: CMEField, active):
    """Rotate so the largest entry is real; return its realified Im index."""
    mods = np.abs(f.a)
    c, i, j = np.unravel_index(np.argmax(mods), mods.shape)
    if c not in active or mods[c, i, j] == 0:
        return None
    f.a *= np.exp(-1j * np.angle(f.a[c, i, j]))
    slot = active.index(c)
    return (2 * slot + 1) * f.grid.size + i * f.grid.n + j


def solve_cme_newton(field: CMEField, tol=1e-10, max_iter=50, use_symmetry=True,
                     report=None):
    """Newton on the realified discretization; returns a new converged field.

    With ``use_symmetry`` the iteration runs in the invariant subspace of the
    class symmetries, which removes the gauge and translation directions and
    cuts the unknown count by the group order. Without it (and for the
    ``general`` class) one Im-equation is replaced by a phase constraint.
    """
    spec = class_spec(field.class_tag)
    active = list(spec.active)
    f = field.copy()
    for c in range(3):
        if c not in active:
            f.a[c] = 0.0
    n = f.grid.n
    P = solution_basis(f.class_tag, f.class_sign, f.grid, tuple(active)) if use_symmetry else None
    pin = None
    x = realify(f.a, active)
    if P is not None:
        x = P @ (P.T @ x)
        f.a = complexify(x, active, n)
    else:
        pin = _phase_pin(f, active)
        x = realify(f.a, active)
    history = []
    for it in range(max_iter + 1):
        res = residual(f)
        rnorm = float(np.max(np.abs(res)))
        history.append(rnorm)
        log.debug("newton %d: |F| = %.3e", it, rnorm)
        if not np.isfinite(rnorm) or rnorm > 1e12:
            raise ConvergenceError("Newton diverged", history)
        if rnorm <= tol:
            break
        if it == max_iter:
            raise ConvergenceError(f"no convergence in {max_iter} Newton steps", history)
        fr = realify(res, active)
        J = realified_jacobian(f, tuple(active))
        if P is not None:
            Jr = (P.T @ J @ P).tocsc()
            rhs = -(P.T @ fr)
            step = P @ factorize(Jr).solve(rhs)
        else:
            J = J.tolil() if pin is not None else J
            rhs = -fr
            if pin is not None:
                J[pin, :] = 0.0
                J[pin, pin] = 1.0
                rhs[pin] = -x[pin]
            step = factorize(J.tocsc()).solve(rhs)
        # mild backtracking keeps a poor seed from blowing up
        lam = 1.0
        for _ in range(6):
            trial = x + lam * step
            ft = f.copy()
            ft.a = complexify(trial, active, n)
            tn = float(np.max(np.abs(residual(ft))))
            if np.isfinite(tn) and (tn < rnorm or lam < 0.1):
                break
            lam *= 0.5
        x = trial
        f = ft
    if report is not None:
        report.iterations = len(history) - 1
        report.history = history
        report.unknowns = P.shape[1] if P is not None else x.size
    f.meta = {k: v for k, v in f.meta.items() if k != "seed"}
    f.meta["residual"] = history[-1]
    if spec.tag != "general" and use_symmetry:
        try:
            check_symmetry(f, 1e-8)
        except SymmetryError:
            raise
    return f


def homotopy_continue(field: CMEField, target_coeffs, steps=10, tol=1e-10, max_bisect=8):
    """Deform curvatures linearly from the field's (abar, abar) to the target."""
    c0 = field.coeffs
    a_start = np.array([c0.alpha1, c0.alpha2])
    a_end = np.array([target_coeffs.alpha1, target_coeffs.alpha2])
    if steps <= 0 or np.allclose(a_start, a_end, rtol=0, atol=0):
        out = field.copy(coeffs=target_coeffs)
        if steps <= 0 and np.array_equal(a_start, a_end):
            return out
        return solve_cme_newton(out, tol)
    s_done = 0.0
    ds = 1.0 / steps
    cur = field
    bisections = 0
    while s_done < 1.0 - 1e-14:
        s_next = min(1.0, s_done + ds)
        al = (1 - s_next) * a_start + s_next * a_end
        trial = cur.copy(coeffs=target_coeffs.with_alphas(*al))
        try:
            cur = solve_cme_newton(trial, tol, max_iter=25)
            s_done = s_next
            log.info("homotopy s=%.4f ok", s_done)
        except (ConvergenceError, SingularSystemError) as exc:
            bisections += 1
            if bisections > max_bisect:
                raise ConvergenceError(f"homotopy stalled at s={s_done:.4f}",
                                       getattr(exc, "history", [])) from exc
            ds *= 0.5
    return cur.copy(coeffs=target_coeffs)


def solve_class(tag, Omega, coeffs, D=20.0, dy=0.14, sign=1, order=4, homotopy_steps=8,
                tol=1e-10, dr=None):
    """Seed, solve and (for two-component classes) homotopy to the true curvatures."""
    grid = CMEGrid.from_spacing(D, dy, order)
    seed = seed_field(tag, Omega, coeffs, grid, sign, dr=dr)
    f = solve_cme_newton(seed, tol)
    if seed.coeffs is not coeffs:
        f = homotopy_continue(f, coeffs, homotopy_steps, tol)
    return f


def regrid(field: CMEField, D):
    """Same spacing, different box: pad with zeros or crop symmetrically."""
    g = field.grid.with_box(D)
    a = np.zeros((3, g.n, g.n), dtype=complex)
    m_old, m_new = field.grid.m, g.m
    if m_new >= m_old:
        o = m_new - m_old
        a[:, o:o + field.grid.n, o:o + field.grid.n] = field.a
    else:
        o = m_old - m_new
        a[:] = field.a[:, o:o + g.n, o:o + g.n]
    return CMEField(a, g, field.omega, field.sigma, field.coeffs, field.class_tag,
                    field.class_sign, dict(field.meta))


def move_box(field: CMEField, D, tol=1e-10, shrink_step=1.0):
    """Re-solve on a box of half-width D, shrinking gradually if needed.

    Padding is harmless; cropping a field that is not yet negligible at the new
    boundary is done in steps of ``shrink_step`` with a Newton solve each time.
    """
    cur = field
    h = shrink_step
    while True:
        target = max(D, cur.grid.D - h)
        try:
            cur = solve_cme_newton(regrid(cur, target), tol, max_iter=25)
        except (ConvergenceError, SingularSystemError):
            h *= 0.5
            if h < 4 * cur.grid.dy:
                raise
            continue
        if abs(cur.grid.D - D) < 0.5 * cur.grid.dy:
            return cur
        h = min(shrink_step, 2 * h)


@dataclass
class SolutionBranch:
    omega: list
    amplitude: list
    paths: list
    class_tag: str
    end_reason: str = ""

    def rows(self):
        return list(zip(self.omega, self.amplitude, self.paths))


def continue_in_omega(seed: CMEField, omega_stop, step, tol=1e-10, min_amplitude=1e-4,
                      out_dir=None, max_halvings=6):
    """Natural-parameter continuation from seed.omega toward omega_stop."""
    direction = np.sign(omega_stop - seed.omega)
    if direction == 0 or step <= 0:
        raise ValueError("omega_stop must differ from the seed frequency and step > 0")
    cur = solve_cme_newton(seed, tol)
    br = SolutionBranch([cur.omega], [cur.amplitude()], [None], seed.class_tag)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        br.paths[0] = cur.save(os.path.join(out_dir, "field-000.bin"))
    h = float(step)
    halvings = 0
    k = 0
    while True:
        om = cur.omega + direction * h
        if direction * (om - omega_stop) > 1e-12:
            om = omega_stop
        try:
            nxt = solve_cme_newton(cur.copy(omega=om), tol, max_iter=20)
        except (ConvergenceError, SingularSystemError):
            halvings += 1
            if halvings > max_halvings:
                br.end_reason = "newton-failure"
                break
            h *= 0.5
            continue
        amp = nxt.amplitude()
        if amp < min_amplitude or not np.isfinite(amp):
            br.end_reason = "edge-reached"
            break
        k += 1
        cur = nxt
        halvings = 0
        br.omega.append(om)
        br.amplitude.append(amp)
        path = None
        if out_dir:
            path = cur.save(os.path.join(out_dir, f"field-{k:03d}.bin"))
        br.paths.append(path)
        if abs(om - omega_stop) <= 1e-12:
            br.end_reason = "range-end"
            break
    return br


def edge_exponent(branch: SolutionBranch, edge, count=6):
    """Least-squares slope of log(amplitude) against log|Omega - edge| near the edge."""
    om = np.asarray(branch.omega)
    amp = np.asarray(branch.amplitude)
    order = np.argsort(np.abs(om - edge))[:count]
    x = np.log(np.abs(om[order] - edge))
    y = np.log(amp[order])
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)
