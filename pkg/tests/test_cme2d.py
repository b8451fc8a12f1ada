from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from gapweaver.cme2d import (CMEField, CMEGrid, continue_in_omega, integrate_cme_time, regrid,
                             residual, residual_norm, solve_class, solve_cme_newton,
                             solve_radial_profile, symmetry_defect, townes_profile)
from gapweaver.cme2d.classes import check_symmetry
from gapweaver.cme2d.core import linear_operators
from gapweaver.errors import FormatError, InvalidGridError, NoLocalizedSolutionError, SymmetryError
from gapweaver.resonance import solve_algebraic_cme


def shoot_oracle(m=0, lo=1.0, hi=4.0, r_max=12.0):
    """Separatrix value for Q'' + (2m+1)/r Q' - Q + r^(2m) Q^3 = 0 via solve_ivp.

    Overshoots cross zero; undershoots have negative energy and stay trapped
    near the positive well, so a zero crossing alone decides the side.
    """
    def crosses(q0):
        def rhs(r, y):
            return [y[1], -(2 * m + 1) / r * y[1] + y[0] - r ** (2 * m) * y[0] ** 3]

        def cross(r, y):
            return y[0]
        cross.terminal = True
        sol = solve_ivp(rhs, (1e-6, r_max), [q0, 0.0], events=cross, rtol=1e-11, atol=1e-13)
        return sol.t_events[0].size > 0

    for _ in range(48):
        mid = 0.5 * (lo + hi)
        if crosses(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def test_townes_constant_against_oracle():
    ref = shoot_oracle()
    s0 = townes_profile(0).q0
    assert ref == pytest.approx(2.2062, abs=1e-3)
    assert s0 == pytest.approx(ref, abs=1e-5)


def test_vortex_slope_against_oracle():
    assert townes_profile(1).q0 == pytest.approx(shoot_oracle(m=1, lo=0.5, hi=3.0), abs=1e-4)


def test_townes_profile_decays_and_solves_ode():
    prof = townes_profile(0)
    r = np.linspace(0.5, 6.0, 400)
    h = 1e-3
    s, sp, sm = prof(r), prof(r + h), prof(r - h)
    ode = (sp - 2 * s + sm) / h ** 2 + (sp - sm) / (2 * h) / r - s + s ** 3
    assert np.max(np.abs(ode)) < 1e-4
    assert prof(np.array([25.0]))[0] < 1e-8


@settings(max_examples=6, deadline=None)
@given(omega=st.floats(1.0, 2.2))
def test_class_b_rescaling(coeffs, omega):
    s0 = townes_profile(0).q0
    prof = solve_radial_profile("B-i", 0, omega, -1, coeffs)
    assert prof.q0 == pytest.approx(np.sqrt((coeffs.beta1 - omega) / coeffs.gamma1) * s0, rel=1e-6)


def test_radial_wrong_side_of_edge(coeffs):
    with pytest.raises(NoLocalizedSolutionError):
        solve_radial_profile("A", 0, 0.5, 1, coeffs)
    with pytest.raises(NoLocalizedSolutionError):
        solve_radial_profile("B-i", 0, 1.0, 1, coeffs)


def test_gauge_invariance_of_residual(b2_field, rng):
    # at a solution the residual is pure rounding, so compare against the size
    # of the stencil terms that cancel in it, |L| |A|
    ops = linear_operators(b2_field.grid, b2_field.coeffs, b2_field.omega)
    scale = max((abs(op) @ np.abs(a).ravel()).max() for op, a in zip(ops, b2_field.a))
    for theta in rng.uniform(0, 2 * np.pi, 4):
        g = b2_field.copy(a=b2_field.a * np.exp(1j * theta))
        r0, r1 = residual(b2_field), residual(g)
        assert np.max(np.abs(r1 - np.exp(1j * theta) * r0)) <= 4 * np.finfo(float).eps * scale
    # away from a solution the residual itself is O(1)
    z = b2_field.copy(a=b2_field.a + 0.1 * rng.standard_normal(b2_field.a.shape))
    zt = z.copy(a=z.a * np.exp(0.7j))
    assert np.allclose(residual(zt), np.exp(0.7j) * residual(z), rtol=1e-13, atol=1e-12)
    assert residual_norm(zt) == pytest.approx(residual_norm(z), rel=1e-14)


def test_constant_amplitude_solves_interior(coeffs):
    # the A-only reduction gives an exact constant solution away from the walls
    omega = 1.5
    [sol] = solve_algebraic_cme(coeffs, omega, 1, "A-only")
    grid = CMEGrid.from_spacing(6.0, 0.5)
    a = np.zeros((3, grid.n, grid.n), dtype=complex)
    a[2] = np.sqrt(sol["|A3|^2"])
    r = residual(CMEField(a, grid, omega, 1, coeffs))
    assert np.max(np.abs(r[:, 3:-3, 3:-3])) < 1e-12


def test_solved_fields_are_converged_and_symmetric(a0_field, b2_field):
    for f in (a0_field, b2_field):
        assert residual_norm(f) < 1e-10
        assert symmetry_defect(f) <= 1e-10
        assert f.boundary_ratio() < 2e-3
        assert check_symmetry(f) <= 1e-10


def test_class_a_matches_radial_profile(coeffs, a0_field):
    prof = solve_radial_profile("A", 0, a0_field.omega, 1, coeffs)
    c = a0_field.grid.center
    assert abs(a0_field.a[2, c, c]) == pytest.approx(prof.q0, rel=2e-3)


def test_symmetry_violation_detected(b2_field):
    bad = b2_field.copy()
    bad.a[0, 0, 1] += 0.5
    with pytest.raises(SymmetryError):
        check_symmetry(bad)


def test_newton_reconverges_from_perturbation(b2_field, rng):
    noisy = b2_field.copy(a=b2_field.a * (1 + 1e-3 * rng.standard_normal(b2_field.a.shape)))
    rep = SimpleNamespace()
    fixed = solve_cme_newton(noisy, report=rep, use_symmetry=False)
    assert residual_norm(fixed) < 1e-10
    assert rep.iterations <= 6 and rep.history[-1] <= 1e-10


def test_regrid_keeps_the_interior(a0_field):
    big = regrid(a0_field, 36.0)
    c0, c1 = a0_field.grid.center, big.grid.center
    assert big.a[2, c1, c1] == pytest.approx(a0_field.a[2, c0, c0])
    assert big.grid.dy == pytest.approx(a0_field.grid.dy)


def test_branch_amplitude_drops_toward_edge(a0_field):
    br = continue_in_omega(a0_field, 1.1, 0.1)
    assert br.omega[-1] == pytest.approx(1.1)
    assert np.all(np.diff(br.amplitude) < 0)


def test_power_conserved_over_unit_time(b2_field):
    evo = integrate_cme_time(b2_field, 1.0, 0.01)
    assert evo.power_drift <= 1e-8


def test_power_conserved_for_general_data(coeffs, rng):
    grid = CMEGrid.from_spacing(10.0, 0.25)
    y1, y2 = grid.mesh()
    bump = np.exp(-(y1 ** 2 + y2 ** 2) / 4)
    a = np.stack([c * bump * np.exp(1j * k * y1) for c, k in zip((3, 1j, 2), (0.3, -0.2, 0.1))])
    evo = integrate_cme_time(CMEField(a, grid, 0.0, 1, coeffs), 1.0, 0.005)
    assert evo.power_drift <= 1e-8


def test_swap_symmetry_preserved_by_flow(b2_field):
    evo = integrate_cme_time(b2_field, 1.0, 0.01)
    assert symmetry_defect(evo.field, conjugations=False) <= 1e-10


def test_stationary_rotation_second_order(b2_field):
    # dt-halving: successive differences shrink by 2^p
    finals = [integrate_cme_time(b2_field, 1.0, dt).field.a for dt in (0.04, 0.02, 0.01)]
    d1 = np.max(np.abs(finals[0] - finals[1]))
    d2 = np.max(np.abs(finals[1] - finals[2]))
    assert np.log2(d1 / d2) >= 1.9
    # and the state really only rotates: modulus changes at spatial-discretization level
    drift = np.max(np.abs(np.abs(finals[2]) - np.abs(b2_field.a))) / b2_field.amplitude()
    assert drift < 0.05


def test_field_round_trip(tmp_path, b2_field):
    path = tmp_path / "f.bin"
    b2_field.save(path)
    again = CMEField.load(path)
    assert np.array_equal(again.a, b2_field.a)
    assert again.class_tag == "B-ii" and again.coeffs == b2_field.coeffs
    assert again.grid == b2_field.grid


def test_truncated_payload_rejected(tmp_path, b2_field):
    path = tmp_path / "f.bin"
    b2_field.save(path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(FormatError):
        CMEField.load(path)


def test_grid_and_field_validation(coeffs):
    with pytest.raises(InvalidGridError):
        CMEGrid.from_spacing(-1.0, 0.1)
    with pytest.raises(InvalidGridError):
        CMEGrid.from_spacing(5.0, 0.1, order=3)
    grid = CMEGrid.from_spacing(2.0, 0.5)
    with pytest.raises(InvalidGridError):
        CMEField(np.zeros((3, 4, 4)), grid, 1.0, 1, coeffs)
    with pytest.raises(ValueError):
        CMEField(np.zeros((3, grid.n, grid.n)), grid, 1.0, 0, coeffs)
    with pytest.raises(ValueError):
        CMEField(np.zeros((3, grid.n, grid.n)), grid, 1.0, 1, coeffs, class_tag="C")
    with pytest.raises(InvalidGridError):
        integrate_cme_time(CMEField(np.zeros((3, grid.n, grid.n)), grid, 1.0, 1, coeffs), 1.0, 0.0)


def test_wrong_side_class_solve(coeffs):
    with pytest.raises(NoLocalizedSolutionError):
        solve_class("A-m0", 0.5, coeffs, D=10.0, dy=0.5)
