"""Multivariate FPCA assembled from univariate eigenfunctions and scores."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bases import EigenBasis
from .exceptions import DegenerateError
from .gfpca import GFPCAConfig, univariate_gfpca


@dataclass
class ScoreMatrix:
    """Univariate scores of all dimensions side by side, one row per level.

    Column blocks follow the dimension order; ``block_sizes[k]`` is the
    number of univariate functions of dimension ``k + 1``.
    """

    xi: np.ndarray
    block_sizes: tuple
    level: str = "unit"
    keys: np.ndarray | None = None

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        self.block_sizes = tuple(int(b) for b in self.block_sizes)
        if self.xi.ndim != 2 or self.xi.shape[1] != sum(self.block_sizes):
            raise ValueError("score columns do not match the block sizes")

    @property
    def n(self):
        return self.xi.shape[0]

    def block(self, k):
        """Column slice of dimension ``k`` (1-based)."""
        start = sum(self.block_sizes[: k - 1])
        return slice(start, start + self.block_sizes[k - 1])

    @classmethod
    def from_fpcas(cls, fpcas, level="unit"):
        """Stack the scores of per-dimension FPCAs, aligning rows by level key.

        Levels missing from a dimension get zero scores, their prior mean.
        """
        key_lists = [np.asarray(f.keys) for f in fpcas]
        if any(f.scores is None for f in fpcas):
            raise ValueError("every univariate FPCA needs scores")
        nested = key_lists[0].ndim == 2
        if nested:
            all_keys = np.unique(np.concatenate(key_lists, axis=0), axis=0)
        else:
            all_keys = np.unique(np.concatenate(key_lists))
        blocks = []
        for f, keys in zip(fpcas, key_lists):
            out = np.zeros((len(all_keys), f.M))
            if nested:
                lookup = {tuple(k): j for j, k in enumerate(all_keys.tolist())}
                pos = np.array([lookup[tuple(k)] for k in keys.tolist()], dtype=int)
            else:
                pos = np.searchsorted(all_keys, keys)
            out[pos] = f.scores
            blocks.append(out)
        return cls(np.hstack(blocks), [f.M for f in fpcas], level, all_keys)


@dataclass
class WeightVector:
    """Positive weights of the multivariate scalar product, one per dimension."""

    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float).ravel()
        if self.w.size == 0 or np.any(~np.isfinite(self.w)) or np.any(self.w <= 0):
            raise ValueError("weights must be finite and positive")


def eigenvalue_weights(upsilon_sums):
    """Inverse total univariate variance per dimension.

    Raises
    ------
    DegenerateError
        If some dimension has zero total variance.
    """
    sums = np.asarray(upsilon_sums, dtype=float).ravel()
    if np.any(sums <= 0):
        raise DegenerateError(f"dimensions {np.flatnonzero(sums <= 0) + 1} have no variation")
    return WeightVector(1.0 / sums)


def assemble_mfpca(scores: ScoreMatrix, uni, weights: WeightVector | None = None, center=True):
    """Multivariate eigenbasis from stacked univariate scores.

    Eigendecomposes ``(n - 1)^{-1} D Xi' Xi D`` with ``D`` holding the square
    roots of the weights blockwise.  The k-th component of function ``m`` is
    ``w_k^{-1/2}`` times the k-th block of eigenvector ``m`` combined with the
    univariate eigenfunctions, which makes the functions orthonormal in the
    weighted scalar product.  Eigenvalues that are not positive are dropped.

    Parameters
    ----------
    scores : ScoreMatrix
    uni : sequence of UnivariateFPCA
        One per dimension, tabulated on a common grid.
    weights : WeightVector, optional
        Equal weights when omitted.
    center : bool
        Subtract column means of the scores first.
    """
    K = len(uni)
    if tuple(f.M for f in uni) != scores.block_sizes:
        raise ValueError("score blocks do not match the univariate bases")
    grid = uni[0].grid
    if any(f.grid.shape != grid.shape or not np.allclose(f.grid, grid) for f in uni):
        raise ValueError("univariate eigenfunctions must share a grid")
    w = np.ones(K) if weights is None else weights.w
    if w.size != K:
        raise ValueError("one weight per dimension is required")
    xi = scores.xi - scores.xi.mean(axis=0) if center else scores.xi
    n = xi.shape[0]
    if n < 2:
        raise DegenerateError("need at least two levels")
    d = np.concatenate([np.full(b, np.sqrt(w[k])) for k, b in enumerate(scores.block_sizes)])
    Z = (xi * d).T @ (xi * d) / (n - 1)
    ev, vec = np.linalg.eigh(0.5 * (Z + Z.T))
    order = np.argsort(ev)[::-1]
    ev, vec = ev[order], vec[:, order]
    keep = ev > 1e-10 * max(float(ev[0]), 1e-300)
    if not np.any(keep):
        raise DegenerateError("scores carry no variation")
    ev, vec = ev[keep], vec[:, keep]
    psi = np.zeros((ev.size, K, grid.size))
    for k, f in enumerate(uni):
        block = vec[scores.block(k + 1)]
        psi[:, k, :] = block.T @ f.phi / np.sqrt(w[k])
    basis = EigenBasis(grid, psi, ev, w, scores.level)
    return basis.with_sign_convention()


def truncation_order(nu, pve):
    nu = np.asarray(nu, dtype=float)
    total = nu.sum()
    if total <= 0:
        return nu.size
    ratio = np.cumsum(nu) / total
    return int(min(np.searchsorted(ratio, pve - 1e-12) + 1, nu.size))


def truncate(basis: EigenBasis, pve: float) -> EigenBasis:
    """Keep the leading functions explaining at least ``pve`` of the total eigenvalue sum."""
    if not 0 < pve <= 1:
        raise ValueError("pve must lie in (0, 1]")
    if pve >= 1:
        return basis
    return basis.head(max(truncation_order(basis.nu, pve), 1))


def evaluate_eigenbasis(basis: EigenBasis, dim: int, times):
    """Values (len(times), M) of component ``dim`` by linear interpolation."""
    return basis.evaluate(dim, times)


@dataclass
class MFPCAConfig:
    """Settings of :func:`estimate_basis`.

    ``weighting`` is ``"equal"`` or ``"eigenvalue"`` (inverse sums of the
    univariate eigenvalues, per process).  ``pve`` truncates every process
    separately; None keeps all functions.
    """

    gfpca: GFPCAConfig = field(default_factory=GFPCAConfig)
    weighting: str = "equal"
    pve: float | None = None

    def __post_init__(self):
        if self.weighting not in ("equal", "eigenvalue"):
            raise ValueError(f"unknown weighting {self.weighting!r}")


def estimate_basis(dataset, config: MFPCAConfig | None = None):
    """Estimate one multivariate eigenbasis per latent process of ``dataset``.

    Returns a dict keyed by level (``"unit"`` and, for nested designs,
    ``"group"``) plus the univariate results under ``"univariate"``.
    """
    cfg = config or MFPCAConfig()
    uni = {}
    for k in range(1, dataset.K + 1):
        uni[k] = univariate_gfpca(dataset.select_dim(k), cfg.gfpca)
    out = {"univariate": uni}
    for level in uni[1]:
        fpcas = [uni[k][level] for k in range(1, dataset.K + 1)]
        scores = ScoreMatrix.from_fpcas(fpcas, level)
        weights = None
        if cfg.weighting == "eigenvalue":
            weights = eigenvalue_weights([f.upsilon.sum() for f in fpcas])
        basis = assemble_mfpca(scores, fpcas, weights)
        if cfg.pve is not None:
            basis = truncate(basis, cfg.pve)
        out[level] = basis
    return out
