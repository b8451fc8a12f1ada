"""The ten acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary and
printed immediately) before asserting. Criteria 5, 6, 7 and 10 take minutes
and carry the ``slow`` marker; deselect them with ``-m "not slow"``.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from gapweaver import compute_coefficients
from gapweaver.bloch1d import check_interlacing, compute_bands, edge_eigenfunctions, edge_eigenvalues
from gapweaver.cli import main
from gapweaver.cme2d import (continue_in_omega, integrate_cme_time, residual, solve_class,
                             solve_radial_profile, symmetry_defect, townes_profile)
from gapweaver.cme2d.newton import edge_exponent
from gapweaver.elliptic2d import GridField2D, convergence_study, integrate_gp_time, tracking_error
from gapweaver.io import read_json
from gapweaver.jacobian import kernel_report
from gapweaver.potential import PeriodicPotential
from gapweaver.resonance import ResonantTriple, check_nonresonance

COS = PeriodicPotential.one_minus_cos()
BASELINE = Path(__file__).parent / "data" / "nonres_baseline.json"


def record(n, checks, detail):
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    line = detail + ("" if ok else f" [failed: {', '.join(failed)}]")
    ACCEPTANCE[n] = (ok, line)
    print(f"{'PASS' if ok else 'FAIL'}  C{n}: {line}")
    assert ok, line


def near(x, ref, tol):
    return abs(x - ref) <= tol


def test_c1_bifurcation_values(tmp_path):
    t = time.perf_counter()
    assert main(["bifurcate", "--grid-n", "512", "--out", str(tmp_path)]) == 0
    dt = time.perf_counter() - t
    r = read_json(tmp_path / "bifurcation.json")
    checks = {"eta0": near(r["eta0"], 0.1745, 0.002), "lambda1": near(r["lambda1"], 0.1595, 0.001),
              "mu1": near(r["mu1"], 0.3336, 0.001), "mu2": near(r["mu2"], 0.5077, 0.001),
              "omega0": near(r["omega0"], 0.6672, 0.002), "runtime": dt <= 10.0}
    record(1, checks, f"eta0={r['eta0']:.6f} lambda1={r['lambda1']:.6f} mu1={r['mu1']:.6f} "
                      f"mu2={r['mu2']:.6f} omega0={r['omega0']:.6f} in {dt:.1f}s")


def test_c2_coefficients():
    t = time.perf_counter()
    c = compute_coefficients(COS)
    dt = time.perf_counter() - t
    gam_ref = (9.4829e-3, 4.5196e-3, 3.7942e-3, 1.5981e-2)
    alp_ref = (0.9422, 6.7813, -4.7890)
    checks = {"beta1": near(c.beta1, 2.2835, 0.01), "beta2": near(c.beta2, 0.9183, 0.005),
              "runtime": dt <= 30.0}
    for i, (g, ref) in enumerate(zip(c.gammas, gam_ref), 1):
        checks[f"gamma{i}"] = abs(g / ref - 1) <= 0.02
    for i, (a, ref) in enumerate(zip((c.alpha1, c.alpha2, c.alpha3), alp_ref), 1):
        checks[f"alpha{i}"] = abs(a / ref - 1) <= 0.01
    record(2, checks, f"beta=({c.beta1:.4f}, {c.beta2:.4f}) gamma=({', '.join(f'{g:.4e}' for g in c.gammas)}) "
                      f"alpha=({c.alpha1:.4f}, {c.alpha2:.4f}, {c.alpha3:.4f}) in {dt:.1f}s")


def test_c3_free_operator_oracle():
    ks = np.linspace(-0.5, 0.5, 21)
    exact = np.sort([[(m + k) ** 2 for m in range(-5, 6)] for k in ks], axis=1)[:, :6].T
    checks, worst = {}, []
    for n in (128, 256, 512):
        err = np.abs(compute_bands(PeriodicPotential.zero(), 0.0, ks, 6, n).bands - exact).max()
        checks[f"grid_n={n}"] = err <= 10 / n ** 2
        worst.append(f"{n}:{err:.2e}<= {10 / n ** 2:.2e}")
    record(3, checks, "max error " + ", ".join(worst))


def test_c4_townes_and_rescaling(coeffs):
    s0 = townes_profile(0).q0
    rel = 0.0
    for omega in (1.0, 1.5, 2.0, 2.2):
        q0 = solve_radial_profile("B-i", 0, omega, -1, coeffs).q0
        rel = max(rel, abs(q0 / (math.sqrt((coeffs.beta1 - omega) / coeffs.gamma1) * s0) - 1))
    record(4, {"S(0)": near(s0, 2.2062, 0.001), "rescaling": rel <= 1e-6},
           f"S(0)={s0:.6f}, worst B-i rescaling rel. error {rel:.1e}")


@pytest.mark.slow
def test_c5_branch_edges(coeffs):
    runs = [("A-m0", 1.3, 0.97, coeffs.beta2, 40.0, 0.4),
            ("B-ii", 1.9, 2.23, coeffs.beta1, 30.0, 0.3),
            ("B-i-m0", 1.9, 2.23, coeffs.beta1, 30.0, 0.3)]
    checks, parts = {}, []
    for tag, start, stop, edge, D, dy in runs:
        br = continue_in_omega(solve_class(tag, start, coeffs, D=D, dy=dy), stop, 0.03)
        p, _ = edge_exponent(br, edge, 6)
        amp = np.asarray(br.amplitude)
        checks[f"{tag} exponent"] = near(p, 0.5, 0.05)
        checks[f"{tag} decays"] = bool(np.all(np.diff(amp) < 0)) and amp[-1] < amp[0] / 2
        parts.append(f"{tag} p={p:.3f} amp {amp[0]:.3f}->{amp[-1]:.3f}")
    record(5, checks, "; ".join(parts))


@pytest.mark.slow
def test_c6_kernel_diagnostics(coeffs):
    t = time.perf_counter()
    b2 = kernel_report(solve_class("B-ii", 1.19, coeffs, D=12.0, dy=0.14), (8, 12, 16, 20))
    ev = np.abs(np.asarray(b2.eigenvalues))
    b4 = kernel_report(solve_class("B-iv", 1.2, coeffs, D=12.0, dy=0.12), (12, 16, 20))
    ev4 = np.abs(np.asarray(b4.eigenvalues))
    dt = time.perf_counter() - t
    checks = {
        "B-ii all D": b2.D == [8.0, 12.0, 16.0, 20.0],
        "B-ii three decrease": bool(np.all(np.diff(np.maximum(ev[:, :3], 1e-9), axis=0) <= 1e-12)),
        "B-ii three < 5e-3": bool(np.all(ev[-1, :3] < 5e-3)),
        "B-ii fourth >= 5e-3": bool(ev[-1, 3] >= 5e-3),
        "B-ii angle": b2.angles[-1] <= 0.05,
        "B-iv fourth in [0.002, 0.01]": bool(np.all((ev4[:, 3] >= 0.002) & (ev4[:, 3] <= 0.01))),
        "runtime": dt <= 600.0,
    }
    record(6, checks, f"B-ii D=20 |lambda|={np.array2string(ev[-1], precision=2)} "
                      f"angle={b2.angles[-1]:.1e}; B-iv lambda4={np.array2string(ev4[:, 3], precision=4)} "
                      f"in {dt:.0f}s")


@pytest.mark.slow
def test_c7_eps_convergence():
    t = time.perf_counter()
    a = convergence_study("A-m0", 1.22, [0.04, 0.06, 0.08, 0.1], D_y=8.0)
    b = convergence_study("B-ii", 0.944, [0.01, 0.02, 0.03, 0.04], D_y=6.0, sign=1,
                          shared_box=False)
    dt = time.perf_counter() - t
    checks = {"A complete": a.complete, "B complete": b.complete,
              "A slope": 0.90 <= a.slope <= 1.25, "B slope": 0.80 <= b.slope <= 1.10,
              "slopes >= 5/6 - 0.05": min(a.slope, b.slope) >= 5 / 6 - 0.05,
              "runtime": dt <= 1800.0}
    record(7, checks, f"A-m0 slope {a.slope:.3f}, B-ii slope {b.slope:.3f} in {dt:.0f}s")


def _odd_mode(X, ppp, eta):
    m = int(round(2 * X / (2 * np.pi / ppp)))
    dx = 2 * X / m
    x = -X + dx * np.arange(m)
    k = 2 * np.pi * np.fft.fftfreq(m, d=dx)
    F = np.fft.fft(np.eye(m), axis=0)
    H = np.real(np.linalg.inv(F) @ np.diag(k ** 2) @ F) + np.diag(eta * (1 - np.cos(x)))
    w, v = np.linalg.eigh(0.5 * (H + H.T))
    for e, u in zip(w, v.T):
        if np.max(np.abs(u + u[(m - np.arange(m)) % m])) < 1e-8:
            return e, u, dx


def test_c8_property_suite(coeffs, b2_field):
    checks = {}
    lam, mu = edge_eigenvalues(COS, coeffs.eta0, 6)
    checks["interlacing"] = check_interlacing(lam, mu)[0]
    efs = edge_eigenfunctions(COS, coeffs.eta0, 3)
    orth = ResonantTriple(efs).orthogonality_error()
    checks["orthogonality"] = orth <= 1e-8
    checks["gamma2 <= gamma1"] = coeffs.gamma2 <= coeffs.gamma1

    # gauge invariance, with rounding measured against the stencil terms
    from gapweaver.cme2d.core import linear_operators
    ops = linear_operators(b2_field.grid, b2_field.coeffs, b2_field.omega)
    scale = max((abs(op) @ np.abs(a).ravel()).max() for op, a in zip(ops, b2_field.a))
    gauge = max(np.abs(residual(b2_field.copy(a=b2_field.a * np.exp(1j * th)))
                       - np.exp(1j * th) * residual(b2_field)).max() for th in (0.3, 1.7, 4.1))
    checks["gauge"] = gauge <= 4 * np.finfo(float).eps * scale

    finals = [integrate_cme_time(b2_field, 1.0, dt) for dt in (0.04, 0.02, 0.01)]
    checks["swap symmetry"] = symmetry_defect(finals[-1].field, conjugations=False) <= 1e-10
    checks["CME power"] = max(e.power_drift for e in finals) <= 1e-8
    d = [np.abs(finals[i].field.a - finals[i + 1].field.a).max() for i in (0, 1)]
    cme_order = math.log2(d[0] / d[1])
    checks["CME order"] = cme_order >= 1.9

    X, eta = 2 * np.pi, 0.3
    e, u, dx = _odd_mode(X, 16, eta)
    phi0 = np.outer(u, u)[1:, 1:]
    init = GridField2D(phi0, X, dx, {"eta": eta, "sigma": 0})
    errs, drift = [], 0.0
    for dt in (0.1, 0.05, 0.025):
        evo = integrate_gp_time(init, t_end=1.0, dt=dt)
        errs.append(np.abs(evo.field.phi - np.exp(-2j * e) * phi0).max())
    gp_order = min(np.log2(np.array(errs[:-1]) / np.array(errs[1:])))
    checks["GP order"] = gp_order >= 1.9
    xx = -4 * np.pi + (np.pi / 8) * np.arange(1, 64)
    x1, x2 = np.meshgrid(xx, xx, indexing="ij")
    blob = GridField2D(1.5 * np.exp(-(x1 ** 2 + x2 ** 2) / 8 + 0.4j * x1), 4 * np.pi, np.pi / 8,
                       {"eta": 0.3, "sigma": 1})
    drift = integrate_gp_time(blob, t_end=1.0, dt=0.01).mass_drift
    checks["GP mass"] = drift <= 1e-8
    record(8, checks, f"orth={orth:.1e} gauge={gauge:.1e} CME order={cme_order:.2f} "
                      f"GP order={gp_order:.2f} GP mass drift={drift:.1e}")


def test_c9_nonresonance(tmp_path):
    assert main(["nonres", "--n-max", "20", "--grid-n", "512", "--out", str(tmp_path)]) == 0
    r = read_json(tmp_path / "nonres.json")
    base = json.loads(BASELINE.read_text())
    checks = {"positive": r["minimum"] > 0, "certified": r["certified"],
              "baseline": abs(r["minimum"] - base["minimum"]) <= 1e-9 * base["minimum"]}
    record(9, checks, f"minimum={r['minimum']:.10f} (baseline {base['minimum']:.10f}), "
                      f"n_star={r['n_star']}, status={r['status']}")


@pytest.mark.slow
def test_c10_tracking_ratio(coeffs):
    t = time.perf_counter()
    e1 = tracking_error(0.1, coeffs=coeffs)
    e2 = tracking_error(0.05, coeffs=coeffs)
    dt = time.perf_counter() - t
    ratio = e2.error / e1.error
    checks = {"ratio": ratio <= 0.5 ** 1.2, "mass": max(e1.mass_drift, e2.mass_drift) <= 1e-8,
              "runtime": dt <= 1200.0}
    record(10, checks, f"err(0.1)={e1.error:.4e} err(0.05)={e2.error:.4e} ratio={ratio:.3f} "
                       f"<= {0.5 ** 1.2:.3f} in {dt:.0f}s")
