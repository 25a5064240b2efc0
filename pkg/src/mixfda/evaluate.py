"""Accuracy metrics for simulation studies.

All curve comparisons happen on a shared dense grid with trapezoid quadrature.
"""

from __future__ import annotations

import csv
import os
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bases import EigenBasis, trapezoid_weights
from .exceptions import DegenerateError


@dataclass
class CurveSet:
    """Function values ``values[k, i, g]`` of K dimensions and n curves on ``grid``."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, None, :]
        elif v.ndim == 2:
            v = v[:, None, :]
        if v.shape[-1] != self.grid.size:
            raise ValueError("curves are not tabulated on the grid")
        self.values = v

    @property
    def K(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[1]


def _as_curves(obj, grid=None):
    if isinstance(obj, CurveSet):
        return obj
    if grid is None:
        raise ValueError("a grid is needed for raw arrays")
    return CurveSet(grid, obj)


def squared_norms(curves: CurveSet):
    """Trapezoid squared L2 norms, shape (K, n)."""
    q = trapezoid_weights(curves.grid)
    return np.einsum("kig,g->ki", curves.values**2, q)


def rrmse(truth, est, grid=None):
    """Relative root mean squared error per dimension.

    ``sqrt(mean_i ||f_i - g_i||^2 / mean_i ||f_i||^2)``.

    Raises
    ------
    DegenerateError
        If the truth of some dimension is identically zero.
    """
    truth = _as_curves(truth, grid)
    est = _as_curves(est, truth.grid if grid is None else grid)
    if truth.values.shape != est.values.shape or not np.allclose(truth.grid, est.grid):
        raise ValueError("truth and estimate must share index sets and grid")
    num = squared_norms(CurveSet(truth.grid, truth.values - est.values)).mean(axis=1)
    den = squared_norms(truth).mean(axis=1)
    if np.any(den <= 0):
        raise DegenerateError("rrMSE undefined: the true curves have zero norm in some dimension")
    return np.sqrt(num / den)


def pointwise_coverage(draws, truth, level=0.95):
    """Fraction of curves whose equal-tailed credible band contains the truth, per grid point.

    Parameters
    ----------
    draws : array (n, D, G)
        Posterior draws of each of n curves.
    truth : array (n, G)
    level : float
    """
    draws = np.asarray(draws, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if draws.ndim == 2:
        draws = draws[None]
        truth = truth[None]
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [alpha, 1.0 - alpha], axis=1)
    return np.mean((lo <= truth) & (truth <= hi), axis=0)


def scalar_metrics(draws, truth, level=0.95):
    """Bias, rMSE (both from posterior means) and coverage for a scalar parameter.

    ``draws`` holds one row of posterior draws per replicate, shape (R, D).
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.shape[0] < 2:
        raise ValueError("need at least two replicates")
    est = draws.mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [alpha, 1.0 - alpha], axis=1)
    err = est - truth
    return float(err.mean()), float(np.sqrt(np.mean(err**2))), float(np.mean((lo <= truth) & (truth <= hi)))


def reconstruct_latent_ls(truth_latent, basis: EigenBasis, grid=None, return_curves=False):
    """Project each unit's multivariate curve onto ``basis`` by weighted least squares.

    The projection minimizes ``sum_k w_k ||f_k - sum_m rho_m psi_mk||^2``
    with the basis' scalar-product weights; the reconstruction is scored with
    :func:`rrmse`.  A rank-deficient basis yields the minimum-norm solution
    and a ``RuntimeWarning``.
    """
    truth = _as_curves(truth_latent, grid if grid is not None else basis.grid)
    if truth.K != basis.K:
        raise ValueError("truth and basis disagree on the number of dimensions")
    psi = np.stack([basis.evaluate(k + 1, truth.grid).T for k in range(basis.K)], axis=1)  # (M, K, G)
    q = trapezoid_weights(truth.grid)
    sw = np.sqrt(basis.weights[:, None] * q[None, :]).ravel()
    A = (psi.reshape(basis.M, -1) * sw).T
    B = (truth.values.transpose(1, 0, 2).reshape(truth.n, -1) * sw).T
    rho, _, rank, _ = np.linalg.lstsq(A, B, rcond=None)
    if rank < basis.M:
        warnings.warn(f"basis is rank deficient ({rank} < {basis.M}); using the minimum-norm fit", RuntimeWarning)
    fitted = np.einsum("mi,mkg->kig", rho, psi)
    score = rrmse(truth, CurveSet(truth.grid, fitted))
    if return_curves:
        return score, CurveSet(truth.grid, fitted)
    return score


def write_metrics_csv(path, rows, fieldnames=None):
    """Atomically write a list of dict rows with deterministic float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    if fieldnames is None:
        fieldnames = []
        for row in rows:
            fieldnames.extend(c for c in row if c not in fieldnames)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _fmt(v) for k, v in row.items()})
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v
