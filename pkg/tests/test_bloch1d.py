import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import mathieu_a, mathieu_b

from gapweaver.bloch1d import (band_curvature, check_interlacing, compute_bands,
                               edge_eigenfunctions, edge_eigenvalues, solve_sturm_liouville)
from gapweaver.errors import DegeneracyError, InvalidGridError
from gapweaver.potential import PeriodicPotential

ZERO = PeriodicPotential.zero()
COS = PeriodicPotential.one_minus_cos()


def mathieu_edges(eta, count):
    """Edge eigenvalues of -u'' + eta (1 - cos x) u from Mathieu characteristic values.

    Substituting x = 2z gives y'' + (a - 2q cos 2z) y = 0 with q = 2 eta and
    rho = eta + a / 4. Periodic modes are pi-periodic in z, antiperiodic
    ones pi-antiperiodic.
    """
    q = 2.0 * eta
    lam = sorted([mathieu_a(2 * r, q) for r in range(count)] +
                 [mathieu_b(2 * r + 2, q) for r in range(count)])[:count]
    mu = sorted([mathieu_a(2 * r + 1, q) for r in range(count)] +
                [mathieu_b(2 * r + 1, q) for r in range(count)])[:count]
    return eta + np.array(lam) / 4, eta + np.array(mu) / 4


@pytest.mark.parametrize("eta", [0.05, 0.174475, 0.6])
def test_edges_match_mathieu(eta):
    lam, mu = edge_eigenvalues(COS, eta, 6, 256)
    lam_ref, mu_ref = mathieu_edges(eta, 6)
    assert np.allclose(lam, lam_ref, atol=1e-8)
    assert np.allclose(mu, mu_ref, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(k=st.floats(-0.5, 0.5), n=st.sampled_from([32, 64, 128]))
def test_free_operator_matches_discrete_symbol(k, n):
    # without extrapolation the solver is exactly the three-point Laplacian,
    # whose Bloch eigenvalues are (4/h^2) sin^2(h (m + k) / 2)
    h = 2 * np.pi / n
    rho, _ = solve_sturm_liouville(ZERO, 0.0, k, 6, n)
    m = np.arange(-n // 2, n // 2)
    ref = np.sort(4 / h ** 2 * np.sin(h * (m + k) / 2) ** 2)[:6]
    assert np.allclose(rho, ref, atol=1e-9)


def test_extrapolated_free_bands_are_fourth_order():
    ks = np.linspace(-0.5, 0.5, 21)
    exact = np.sort([[(m + k) ** 2 for m in range(-4, 5)] for k in ks], axis=1)[:, :6].T
    errs = [np.abs(compute_bands(ZERO, 0.0, ks, 6, n).bands - exact).max() for n in (64, 128)]
    assert errs[1] < errs[0] / 12


def test_eta_times_constant_shift():
    # a constant potential only shifts the spectrum
    p = PeriodicPotential.from_table([1.0] * 16)
    a = solve_sturm_liouville(p, 0.3, 0.2, 4, 64)[0]
    b = solve_sturm_liouville(ZERO, 0.0, 0.2, 4, 64)[0]
    assert np.allclose(a, b + 0.3, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(eta=st.floats(0.01, 2.0))
def test_interlacing_holds(eta):
    lam, mu = edge_eigenvalues(COS, eta, 6, 64, richardson=False)
    ok, msg = check_interlacing(lam, mu)
    assert ok, msg


def test_interlacing_detects_disorder():
    ok, _ = check_interlacing([0.0, 1.0, 1.1], [0.5, 0.4, 2.0])
    assert not ok
    ok, msg = check_interlacing([0.0, 1.0], [0.0, 0.2], strict=True)
    assert not ok and "strictly" in msg


def test_bands_symmetric_and_bounded_by_edges():
    ks = np.linspace(-0.5, 0.5, 11)
    bd = compute_bands(COS, 0.4, ks, 4, 128)
    assert np.allclose(bd.bands, bd.bands[:, ::-1], atol=1e-12)
    # band 1 runs from lambda1 (k=0) up to mu1 (k=1/2)
    assert np.isclose(bd.band(1)[5], bd.lam[0], atol=1e-10)
    assert np.isclose(bd.band(1)[0], bd.mu[0], atol=1e-10)
    assert np.all(bd.band(1) <= bd.mu[0] + 1e-10)


def test_curvature_of_free_band():
    # rho_1(k) = k^2 near k = 0 for W = 0
    assert band_curvature(ZERO, 0.0, 1, 0.0, 128) == pytest.approx(2.0, abs=1e-6)


def test_curvature_degenerate_edge_raises():
    with pytest.raises(DegeneracyError):
        band_curvature(ZERO, 0.0, 1, 0.5, 128)


def test_curvature_needs_edge():
    with pytest.raises(ValueError):
        band_curvature(COS, 0.2, 1, 0.25, 128)


def test_eigenfunctions_normalized_with_parity():
    efs = edge_eigenfunctions(COS, 0.174475, 3, 128)
    for block in (efs.psi, efs.phi):
        gram = block.T @ block * efs.dx
        assert np.allclose(gram, np.eye(3), atol=1e-12)
    # psi periodic over 2 pi, phi antiperiodic
    half = efs.x.size // 2
    assert np.allclose(efs.psi[:half], efs.psi[half:], atol=1e-12)
    assert np.allclose(efs.phi[:half], -efs.phi[half:], atol=1e-12)
    # psi_1 even and positive at the origin
    assert efs.evaluate("psi", 1, np.array([0.0]))[0] > 0


def test_eigenfunction_residual():
    eta = 0.3
    efs = edge_eigenfunctions(COS, eta, 2, 256)
    lam, mu = edge_eigenvalues(COS, eta, 2, 256, richardson=False)
    u, h = efs.phi[:, 1], efs.dx
    lap = (np.roll(u, -1) - 2 * u + np.roll(u, 1)) / h ** 2
    res = -lap + eta * (1 - np.cos(efs.x)) * u - mu[1] * u
    assert np.max(np.abs(res)) < 1e-9


@pytest.mark.parametrize("grid_n,n_eigs", [(30, 4), (33, 4), (64, 17)])
def test_bad_grids(grid_n, n_eigs):
    with pytest.raises(InvalidGridError):
        solve_sturm_liouville(COS, 0.2, 0.0, n_eigs, grid_n)


def test_k_outside_zone():
    with pytest.raises(ValueError):
        solve_sturm_liouville(COS, 0.2, 0.7, 2, 64)
