import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixfda.bases import (
    EigenBasis,
    bspline_design,
    difference_penalty,
    row_tensor,
    split_fourier_eigenbasis,
    tensor_penalty,
    trapezoid_weights,
)
from mixfda.exceptions import DomainError

GRID = np.linspace(0, 1, 101)


def test_cubic_partition_of_unity():
    B = bspline_design(10, 3, GRID)
    assert B.shape == (101, 14)
    np.testing.assert_allclose(B.values.sum(axis=1), 1.0, atol=1e-12)


def test_linear_hat_functions():
    B = bspline_design(0, 1, [0.25])
    np.testing.assert_allclose(B.values, [[0.75, 0.25]])


def test_points_outside_domain():
    with pytest.raises(DomainError):
        bspline_design(5, 3, [1.2])


def test_cyclic_seam_continuity():
    # value, first and second derivative agree across the seam (finite differences)
    h = 1e-4
    lo, hi = 0.0, 1.0
    B = lambda x: bspline_design(10, 3, x, cyclic=True).values
    near_lo = B([lo, lo + h, lo + 2 * h])
    near_hi = B([hi - 2 * h, hi - h, hi])
    np.testing.assert_allclose(near_lo[0], near_hi[2], atol=1e-12)
    d1_lo = (near_lo[1] - near_lo[0]) / h
    d1_hi = (near_hi[2] - near_hi[1]) / h
    np.testing.assert_allclose(d1_lo, d1_hi, atol=1e-2 * np.abs(d1_lo).max())
    d2_lo = (near_lo[2] - 2 * near_lo[1] + near_lo[0]) / h**2
    d2_hi = (near_hi[2] - 2 * near_hi[1] + near_hi[0]) / h**2
    np.testing.assert_allclose(d2_lo, d2_hi, atol=2e-2 * np.abs(d2_lo).max())
    assert B(GRID).shape[1] == 11
    np.testing.assert_allclose(B(GRID).sum(axis=1), 1.0, atol=1e-12)


def test_first_order_penalty_by_hand():
    P = difference_penalty(3, 1)
    np.testing.assert_array_equal(P.values, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])


@pytest.mark.parametrize("d", [5, 10, 14])
def test_second_order_null_space(d):
    P = difference_penalty(d, 2).values
    lin = np.arange(1, d + 1, dtype=float)
    quad = lin**2
    np.testing.assert_allclose(P @ lin, 0.0, atol=1e-12)
    np.testing.assert_allclose(P @ np.ones(d), 0.0, atol=1e-12)
    assert np.linalg.norm(P @ quad) > 1.0


@pytest.mark.parametrize("d", [5, 10, 14])
@pytest.mark.parametrize("order", [1, 2])
def test_penalty_rank(d, order):
    P = difference_penalty(d, order)
    ev = np.linalg.eigvalsh(P.values)
    assert np.sum(ev > 1e-9) == d - order
    assert P.null_dim == order
    assert ev.min() > -1e-10


def test_penalty_order_too_large():
    with pytest.raises(ValueError):
        difference_penalty(3, 3)


def test_row_tensor_small():
    np.testing.assert_array_equal(row_tensor([[1, 2]], [[3, 4]]), [[3, 4, 6, 8]])


def test_row_tensor_identity():
    V = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_array_equal(row_tensor(V, np.ones((5, 1))), V)


def test_row_tensor_brute_force():
    rng = np.random.default_rng(1)
    V = rng.normal(size=(4, 2))
    W = rng.normal(size=(4, 3))
    brute = np.array([np.outer(V[s], W[s]).ravel() for s in range(4)])
    assert np.max(np.abs(row_tensor(V, W) - brute)) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 6), st.integers(0, 10_000))
def test_row_tensor_column_selection(v, w, s, seed):
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(s, v))
    W = rng.normal(size=(s, w))
    R = row_tensor(V, W)
    for a in range(v):
        for b in range(w):
            np.testing.assert_array_equal(R[:, a * w + b], V[:, a] * W[:, b])


def test_row_tensor_mismatch():
    with pytest.raises(ValueError):
        row_tensor(np.ones((3, 2)), np.ones((4, 2)))


def test_tensor_penalty_degenerate_time_constant():
    Px = difference_penalty(4, 2)
    Pt = np.zeros((3, 3))
    P = tensor_penalty(Px, Pt, 2.0, 1.0)
    np.testing.assert_allclose(P.values, 2.0 * np.kron(Px.values, np.eye(3)))


def test_tensor_penalty_identity():
    P = tensor_penalty(np.eye(3), np.eye(2), 1.0, 1.0)
    np.testing.assert_array_equal(P.values, 2 * np.eye(6))


def test_tensor_penalty_quadratic_form_by_summation():
    rng = np.random.default_rng(2)
    dx, dt = 4, 5
    Px = difference_penalty(dx, 2).values
    Pt = difference_penalty(dt, 1).values
    a, b = 0.7, 3.1
    beta = rng.normal(size=dx * dt)
    Bm = beta.reshape(dx, dt)  # coefficient (i, j) sits at column i * dt + j
    direct = 0.0
    for j in range(dt):
        direct += a * Bm[:, j] @ Px @ Bm[:, j]
    for i in range(dx):
        direct += b * Bm[i, :] @ Pt @ Bm[i, :]
    P = tensor_penalty(Px, Pt, a, b).values
    assert abs(beta @ P @ beta - direct) <= 1e-12 * max(1.0, abs(direct))
    np.testing.assert_allclose(P, P.T)
    assert np.linalg.eigvalsh(P).min() > -1e-10


def test_tensor_penalty_rejects_nonpositive():
    with pytest.raises(ValueError):
        tensor_penalty(np.eye(2), np.eye(2), 0.0, 1.0)


def test_split_fourier_orthonormal():
    basis = split_fourier_eigenbasis(6, 3, GRID, np.random.default_rng(5))
    G = basis.gram()
    assert np.max(np.abs(G - np.eye(6))) < 1e-3
    assert basis.psi.shape == (6, 3, 101)


def test_split_fourier_single_dim_is_fourier():
    basis = split_fourier_eigenbasis(5, 1, GRID, 3)
    u = GRID
    ref = np.array([
        np.ones_like(u),
        np.sqrt(2) * np.sin(2 * np.pi * u),
        np.sqrt(2) * np.cos(2 * np.pi * u),
        np.sqrt(2) * np.sin(4 * np.pi * u),
        np.sqrt(2) * np.cos(4 * np.pi * u),
    ])
    sign = np.sign(basis.psi[0, 0, 0])
    np.testing.assert_allclose(basis.psi[:, 0, :], sign * ref, atol=1e-12)


def test_split_fourier_determinism():
    a = split_fourier_eigenbasis(6, 3, GRID, 42)
    b = split_fourier_eigenbasis(6, 3, GRID, 42)
    np.testing.assert_array_equal(a.psi, b.psi)


def test_eigenbasis_evaluate_and_roundtrip(tmp_path):
    basis = split_fourier_eigenbasis(4, 2, GRID, 1)
    np.testing.assert_allclose(basis.evaluate(2, GRID), basis.psi[:, 1, :].T)
    mid = (GRID[3] + GRID[4]) / 2
    np.testing.assert_allclose(basis.evaluate(1, [mid])[0], (basis.psi[:, 0, 3] + basis.psi[:, 0, 4]) / 2)
    basis.save(tmp_path / "b.csv")
    back = EigenBasis.load(tmp_path / "b.csv")
    np.testing.assert_array_equal(back.psi, basis.psi)
    np.testing.assert_array_equal(back.nu, basis.nu)
    with pytest.raises(DomainError):
        basis.evaluate(1, [1.5])


def test_trapezoid_weights_integrate_linear():
    g = np.sort(np.random.default_rng(0).uniform(0, 2, 30))
    assert trapezoid_weights(g) @ (3 * g + 1) == pytest.approx(np.trapezoid(3 * g + 1, g))
