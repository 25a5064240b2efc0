"""Spline bases, difference penalties, row tensor products and eigenbases."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.interpolate import BSpline

from .exceptions import DomainError

__all__ = [
    "BasisMatrix",
    "PenaltyMatrix",
    "EigenBasis",
    "bspline_design",
    "difference_penalty",
    "row_tensor",
    "tensor_penalty",
    "split_fourier_eigenbasis",
    "trapezoid_weights",
]


def trapezoid_weights(grid):
    """Quadrature weights of the trapezoid rule on a sorted grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 1:
        return np.ones(1)
    h = np.diff(grid)
    w = np.zeros(grid.size)
    w[:-1] += h / 2.0
    w[1:] += h / 2.0
    return w


@dataclass(frozen=True)
class BasisMatrix:
    values: np.ndarray
    kind: str = "bspline"
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True)
class PenaltyMatrix:
    values: np.ndarray
    null_dim: int

    @property
    def shape(self):
        return self.values.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def _knot_vector(n_knots, degree, domain):
    lo, hi = domain
    n_seg = n_knots + 1
    h = (hi - lo) / n_seg
    # equidistant knots extended `degree` intervals beyond each boundary
    return lo + h * np.arange(-degree, n_seg + degree + 1)


def bspline_design(n_knots, degree, points, cyclic=False, domain=(0.0, 1.0)) -> BasisMatrix:
    """Evaluate an equidistant B-spline basis at ``points``.

    ``n_knots`` interior knots split ``domain`` into ``n_knots + 1`` equal
    segments.  The open basis has ``n_knots + degree + 1`` columns; the cyclic
    basis wraps the trailing ``degree`` columns onto the leading ones and has
    ``n_knots + 1`` columns, continuous with ``degree - 1`` derivatives across
    the seam.
    """
    if degree < 1 or int(degree) != degree:
        raise ValueError("degree must be a positive integer")
    if n_knots < 0:
        raise ValueError("n_knots must be non-negative")
    degree = int(degree)
    n_knots = int(n_knots)
    lo, hi = float(domain[0]), float(domain[1])
    x = np.atleast_1d(np.asarray(points, dtype=float))
    eps = 1e-10 * (hi - lo)
    if np.any(x < lo - eps) or np.any(x > hi + eps) or not np.all(np.isfinite(x)):
        raise DomainError(f"points outside the knot span {domain}")
    x = np.clip(x, lo, hi)
    knots = _knot_vector(n_knots, degree, (lo, hi))
    n_basis = knots.size - degree - 1
    if x.size == 0:
        width = n_knots + 1 if cyclic else n_basis
        meta = {"n_knots": n_knots, "degree": degree, "cyclic": bool(cyclic), "domain": (lo, hi)}
        return BasisMatrix(np.zeros((0, width)), "bspline", meta)
    if cyclic:
        if n_knots + 1 < degree:
            raise ValueError("cyclic basis needs at least `degree` segments")
        period = hi - lo
        xc = lo + np.mod(x - lo, period)
        dm = BSpline.design_matrix(xc, knots, degree, extrapolate=False).toarray()
        n_cyc = n_knots + 1
        values = dm[:, :n_cyc].copy()
        values[:, : n_basis - n_cyc] += dm[:, n_cyc:]
        meta = {"n_knots": n_knots, "degree": degree, "cyclic": True, "domain": (lo, hi)}
        return BasisMatrix(values, "bspline", meta)
    dm = BSpline.design_matrix(x, knots, degree, extrapolate=False).toarray()
    meta = {"n_knots": n_knots, "degree": degree, "cyclic": False, "domain": (lo, hi)}
    return BasisMatrix(dm, "bspline", meta)


def n_knots_for(d, degree=3, cyclic=False):
    """Interior-knot count giving a basis of ``d`` functions."""
    n = d - 1 if cyclic else d - degree - 1
    if n < 0:
        raise ValueError(f"basis size {d} too small for degree {degree}")
    return n


def difference_penalty(d, order, cyclic=False) -> PenaltyMatrix:
    """Penalty ``D^T D`` built from the ``order``-th difference operator.

    The cyclic variant uses wrapped differences; its null space is the
    constant vector only.
    """
    d = int(d)
    order = int(order)
    if order < 0:
        raise ValueError("order must be non-negative")
    if order >= d:
        raise ValueError(f"difference order {order} must be smaller than basis size {d}")
    if order == 0:
        return PenaltyMatrix(np.eye(d), 0)
    if cyclic:
        D = np.eye(d)
        step = np.roll(np.eye(d), 1, axis=1) - np.eye(d)
        for _ in range(order):
            D = step @ D
        return PenaltyMatrix(D.T @ D, 1)
    D = np.diff(np.eye(d), n=order, axis=0)
    return PenaltyMatrix(D.T @ D, order)


def row_tensor(V, W):
    """Row-wise Kronecker product: row ``s`` is ``kron(V[s], W[s])``."""
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if W.ndim == 1:
        W = W[:, None]
    if V.shape[0] != W.shape[0]:
        raise ValueError(f"row counts differ: {V.shape[0]} vs {W.shape[0]}")
    return (V[:, :, None] * W[:, None, :]).reshape(V.shape[0], V.shape[1] * W.shape[1])


def tensor_penalty(Px, Pt, inv_tau2_x, inv_tau2_t) -> PenaltyMatrix:
    """Anisotropic Kronecker-sum penalty for a two-margin tensor product."""
    if inv_tau2_x <= 0 or inv_tau2_t <= 0:
        raise ValueError("smoothing parameters must be positive")
    Px_ = np.asarray(Px, dtype=float)
    Pt_ = np.asarray(Pt, dtype=float)
    dx, dt = Px_.shape[0], Pt_.shape[0]
    values = inv_tau2_x * np.kron(Px_, np.eye(dt)) + inv_tau2_t * np.kron(np.eye(dx), Pt_)
    ev = np.linalg.eigvalsh(values)
    null_dim = int(np.sum(ev <= 1e-9 * max(ev.max(), 1.0)))
    return PenaltyMatrix(values, null_dim)


def kron_penalties(Px, Pt):
    """The two marginal penalties expanded to the tensor coefficient space."""
    Px_ = np.asarray(Px, dtype=float)
    Pt_ = np.asarray(Pt, dtype=float)
    return np.kron(Px_, np.eye(Pt_.shape[0])), np.kron(np.eye(Px_.shape[0]), Pt_)


class EigenBasis:
    """Multivariate eigenfunctions tabulated on a common grid.

    Attributes
    ----------
    grid : (G,) array
    psi : (M, K, G) array
        ``psi[m, k]`` is the k-th component of the m-th eigenfunction.
    nu : (M,) array
        Eigenvalues, nonincreasing.
    weights : (K,) array
        Scalar-product weights under which the functions are orthonormal.
    level : str
        Tag of the latent process the basis belongs to.
    """

    def __init__(self, grid, psi, nu, weights=None, level="unit"):
        self.grid = np.asarray(grid, dtype=float)
        psi = np.asarray(psi, dtype=float)
        if psi.ndim == 2:
            psi = psi[:, None, :]
        self.psi = psi
        self.nu = np.asarray(nu, dtype=float).ravel()
        if self.psi.shape[0] != self.nu.size:
            raise ValueError("psi and nu disagree on the number of functions")
        if self.psi.shape[2] != self.grid.size:
            raise ValueError("psi is not tabulated on grid")
        K = self.psi.shape[1]
        self.weights = np.ones(K) if weights is None else np.asarray(weights, dtype=float).ravel()
        if self.weights.size != K or np.any(self.weights <= 0):
            raise ValueError("weights must be K positive numbers")
        self.level = level

    @property
    def M(self):
        return self.psi.shape[0]

    @property
    def K(self):
        return self.psi.shape[1]

    def __repr__(self):
        return f"EigenBasis(M={self.M}, K={self.K}, level={self.level!r}, grid={self.grid.size} pts)"

    def gram(self):
        """Weighted Gram matrix under trapezoid quadrature."""
        q = trapezoid_weights(self.grid)
        return np.einsum("akg,bkg,k,g->ab", self.psi, self.psi, self.weights, q)

    def evaluate(self, dim, times):
        """Linear interpolation of component ``dim`` (1-based) at ``times``: (len(times), M)."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        lo, hi = self.grid[0], self.grid[-1]
        tol = 1e-10 * (hi - lo)
        if np.any(times < lo - tol) or np.any(times > hi + tol):
            raise DomainError(f"evaluation times outside [{lo}, {hi}]")
        comp = self.psi[:, dim - 1, :]
        idx = np.clip(np.searchsorted(self.grid, times, side="right") - 1, 0, self.grid.size - 2)
        x0 = self.grid[idx]
        x1 = self.grid[idx + 1]
        lam = np.clip((times - x0) / (x1 - x0), 0.0, 1.0)
        return (comp[:, idx] * (1.0 - lam) + comp[:, idx + 1] * lam).T

    def subset(self, m):
        m = np.atleast_1d(m)
        return EigenBasis(self.grid, self.psi[m], self.nu[m], self.weights, self.level)

    def head(self, M):
        return self.subset(np.arange(M))

    def restrict(self, dim):
        """Single-dimension basis made of component ``dim`` (1-based)."""
        return EigenBasis(self.grid, self.psi[:, dim - 1 : dim, :], self.nu, [1.0], self.level)

    def with_sign_convention(self):
        """Flip each function so its largest absolute tabulated value is positive."""
        flat = self.psi.reshape(self.M, -1)
        pos = np.argmax(np.abs(flat), axis=1)
        sign = np.sign(flat[np.arange(self.M), pos])
        sign[sign == 0] = 1.0
        return EigenBasis(self.grid, self.psi * sign[:, None, None], self.nu, self.weights, self.level)

    # ------------------------------------------------------------- persistence
    def to_frame(self):
        M, K, G = self.psi.shape
        m, k, g = np.meshgrid(np.arange(1, M + 1), np.arange(1, K + 1), np.arange(G), indexing="ij")
        return pd.DataFrame(
            {
                "level": self.level,
                "m": m.ravel(),
                "dim": k.ravel(),
                "t": self.grid[g.ravel()],
                "value": self.psi.ravel(),
            }
        )

    def save(self, csv_path, json_path=None):
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path is not None else csv_path.with_suffix(".json")
        self.to_frame().to_csv(csv_path, index=False, float_format="%.17g")
        json_path.write_text(
            json.dumps({"level": self.level, "nu": self.nu.tolist(), "weights": self.weights.tolist()}, indent=2)
        )

    @classmethod
    def load(cls, csv_path, json_path=None):
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path is not None else csv_path.with_suffix(".json")
        meta = json.loads(json_path.read_text())
        frame = pd.read_csv(csv_path, float_precision="round_trip")
        M = int(frame["m"].max())
        K = int(frame["dim"].max())
        grid = np.unique(frame["t"].to_numpy())
        psi = np.zeros((M, K, grid.size))
        gi = np.searchsorted(grid, frame["t"].to_numpy())
        psi[frame["m"].to_numpy() - 1, frame["dim"].to_numpy() - 1, gi] = frame["value"].to_numpy()
        return cls(grid, psi, meta["nu"], meta["weights"], meta.get("level", "unit"))


def fourier_functions(M, x, lo, hi):
    """Orthonormal Fourier system on [lo, hi]: 1, sin, cos, sin, cos, ..."""
    length = hi - lo
    u = (x - lo) / length
    out = np.empty((M, x.size))
    out[0] = 1.0 / np.sqrt(length)
    for m in range(2, M + 1):
        freq = 2 * (m // 2)
        if m % 2 == 0:
            out[m - 1] = np.sqrt(2.0 / length) * np.sin(freq * np.pi * u)
        else:
            out[m - 1] = np.sqrt(2.0 / length) * np.cos(freq * np.pi * u)
    return out


def split_fourier_eigenbasis(M, K, grid, rng, level="unit") -> EigenBasis:
    """Multivariate orthonormal basis from split Fourier functions.

    The first ``M`` Fourier functions are taken on the concatenated interval
    ``[0, K * L]`` (``L`` the length of the common domain); the piece on
    ``[(k-1) L, k L]`` is shifted back onto the domain and becomes component
    ``k``.  Each component is multiplied by an independent random sign
    (probability 1/2 each), shared by all ``M`` functions.  Orthonormality
    under unit weights follows because the pieces tile the long interval.
    """
    if M < 1 or K < 1:
        raise ValueError("M and K must be positive")
    rng = np.random.default_rng(rng)
    grid = np.asarray(grid, dtype=float)
    lo, hi = grid[0], grid[-1]
    length = hi - lo
    psi = np.empty((M, K, grid.size))
    for k in range(K):
        x = grid - lo + k * length
        psi[:, k, :] = fourier_functions(M, x, 0.0, K * length)
    signs = rng.choice(np.array([-1.0, 1.0]), size=K)
    psi *= signs[None, :, None]
    return EigenBasis(grid, psi, np.ones(M), np.ones(K), level)
