import numpy as np
import pytest

from gapweaver.cme2d import CMEField, CMEGrid, solve_class
from gapweaver.cme2d.core import realify, residual
from gapweaver.errors import NotBlockDiagonalizableError
from gapweaver.jacobian import (assemble_jacobian, block_diagonalize, kernel_candidates,
                                kernel_report, sector_smallest, smallest_eigs,
                                zero_field_eigenvalues)


@pytest.fixture(scope="module")
def small_b2(coeffs):
    return solve_class("B-ii", 1.5, coeffs, D=10.0, dy=0.8)


@pytest.fixture(scope="module")
def small_b4(coeffs):
    return solve_class("B-iv", 1.5, coeffs, D=10.0, dy=0.8)


def test_jacobian_matches_finite_differences(small_b2, rng):
    op = assemble_jacobian(small_b2)
    act = op.active
    v = rng.standard_normal(op.shape[0])
    x = realify(small_b2.a, act)

    def F(xx):
        a = np.zeros_like(small_b2.a)
        n = small_b2.grid.n
        for s, c in enumerate(act):
            blk = xx[2 * s * n * n:(2 * s + 2) * n * n]
            a[c] = (blk[:n * n] + 1j * blk[n * n:]).reshape(n, n)
        return realify(residual(small_b2.copy(a=a)), act)

    h = 1e-5
    fd = (F(x + h * v) - F(x - h * v)) / (2 * h)
    assert np.allclose(fd, op.matrix @ v, rtol=0, atol=1e-6 * np.abs(op.matrix @ v).max())


def test_jacobian_symmetric(small_b4):
    J = assemble_jacobian(small_b4).matrix
    assert abs(J - J.T).max() < 1e-12 * abs(J).max()


def test_gauge_mode_in_kernel(small_b2):
    op = assemble_jacobian(small_b2)
    C = kernel_candidates(small_b2, op.active)
    ia = C[:, 2]
    assert np.linalg.norm(op.matrix @ ia) < 1e-8 * np.linalg.norm(ia)


def test_zero_field_spectrum(coeffs):
    grid = CMEGrid.from_spacing(4.0, 0.5)
    f = CMEField(np.zeros((3, grid.n, grid.n)), grid, 1.5, -1, coeffs, class_tag="B-ii")
    op = assemble_jacobian(f)
    exact = zero_field_eigenvalues(grid, coeffs, 1.5, op.active)
    w = np.linalg.eigvalsh(op.matrix.toarray())
    assert np.allclose(np.sort(w), exact, atol=1e-10)
    near = smallest_eigs(op, 4)
    assert np.allclose(np.sort(np.abs(near)), np.sort(np.abs(exact))[:4], atol=1e-10)


def test_sectors_reproduce_full_spectrum(small_b2):
    op = assemble_jacobian(small_b2)
    full = np.linalg.eigvalsh(op.matrix.toarray())
    ref = full[np.argsort(np.abs(full))[:6]]
    w = sector_smallest(small_b2, 6)
    assert np.allclose(np.sort(w), np.sort(ref), atol=1e-9)


def test_block_split_is_exact(small_b2):
    op = assemble_jacobian(small_b2)
    jp, jm = block_diagonalize(op)
    both = np.sort(np.concatenate([np.linalg.eigvalsh(jp.toarray()),
                                   np.linalg.eigvalsh(jm.toarray())]))
    assert np.allclose(both, np.linalg.eigvalsh(op.matrix.toarray()), atol=1e-9)


def test_block_split_refused_for_vortex_class(small_b4):
    with pytest.raises(NotBlockDiagonalizableError):
        block_diagonalize(assemble_jacobian(small_b4))


def test_unconverged_field_rejected(small_b2):
    bad = small_b2.copy(a=small_b2.a * 1.01)
    with pytest.raises(ValueError, match="solve first"):
        assemble_jacobian(bad)


def test_kernel_report_known_for_single_component(coeffs):
    f = solve_class("A-m0", 1.3, coeffs, D=10.0, dy=0.8)
    rep = kernel_report(f)
    assert rep.verified and not rep.computed


def test_kernel_report_rows(small_b2):
    rep = kernel_report(small_b2, D_list=(8, 10), resolve=True)
    assert rep.D == [8.0, 10.0]
    assert len(rep.rows()[0]) == 6
    # iA is an exact kernel vector at every box size
    assert all(min(np.abs(ev)) < 1e-8 for ev in rep.eigenvalues)
