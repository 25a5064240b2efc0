"""Small dense linear-algebra helpers shared by the optimizers and samplers."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, solve_triangular


def ridge_cholesky(A, max_doublings=60):
    """Cholesky factor of ``A``, adding ``lam * I`` (lam doubled) until it succeeds.

    Returns ``(L, lam)`` with lower-triangular ``L`` of ``A + lam I``.
    """
    A = 0.5 * (A + A.T)
    try:
        return np.linalg.cholesky(A), 0.0
    except np.linalg.LinAlgError:
        pass
    lam = 1e-8 * max(float(np.max(np.abs(np.diag(A)))), 1.0)
    eye = np.eye(A.shape[0])
    for _ in range(max_doublings):
        try:
            return np.linalg.cholesky(A + lam * eye), lam
        except np.linalg.LinAlgError:
            lam *= 2.0
    raise np.linalg.LinAlgError("matrix could not be regularized to positive definiteness")


def chol_solve(L, b):
    return cho_solve((L, True), b)


def gaussian_draw(mean, L, z):
    """``mean + L^{-T} z``: a draw from N(mean, (L L^T)^{-1})."""
    return mean + solve_triangular(L, z, lower=True, trans="T")


def gaussian_logq(x, mean, L):
    """Log density of N(mean, (L L^T)^{-1}) at ``x`` without the 2*pi constant."""
    z = L.T @ (x - mean)
    return float(np.sum(np.log(np.diag(L))) - 0.5 * z @ z)


def batched_ridge_cholesky(A, max_doublings=60):
    """Batched version of :func:`ridge_cholesky` for (n, M, M) arrays."""
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    n, M, _ = A.shape
    L = np.empty_like(A)
    ridge = np.zeros(n)
    try:
        return np.linalg.cholesky(A), ridge
    except np.linalg.LinAlgError:
        pass
    for i in range(n):
        L[i], ridge[i] = ridge_cholesky(A[i], max_doublings)
    return L, ridge


def batched_solve_lower(L, b):
    """Solve ``L x = b`` for lower-triangular batches (n, M, M) and rhs (n, M)."""
    return np.linalg.solve(L, b[..., None])[..., 0]


def batched_solve_upper_t(L, b):
    """Solve ``L^T x = b`` for lower-triangular ``L``."""
    return np.linalg.solve(np.swapaxes(L, 1, 2), b[..., None])[..., 0]


def batched_chol_solve(L, b):
    return batched_solve_upper_t(L, batched_solve_lower(L, b))


def batched_logq(x, mean, L):
    z = np.einsum("nji,nj->ni", L, x - mean)  # L^T (x - mean)
    logdet = np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    return logdet - 0.5 * np.sum(z * z, axis=1)
