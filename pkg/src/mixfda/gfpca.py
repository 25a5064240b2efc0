"""Univariate generalized functional principal component analysis.

The pipeline for one dimension:

1. Cut the domain into overlapping bins and fit a scalar generalized mixed
   model with a random intercept per curve in each bin.
2. Treat the random intercepts as noisy discretized realizations of the latent
   process, smooth their covariance with a sandwich P-spline smoother and
   eigendecompose.
3. For nested designs, split curve-level intercepts into a between-unit and a
   within-unit process by the method of moments before step 2.
4. Re-estimate the scores in a model over the whole domain that uses the
   estimated eigenfunctions as random-effect basis, because binned scores are
   biased.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import optimize, sparse

from .bases import EigenBasis, bspline_design, difference_penalty, n_knots_for, trapezoid_weights
from .exceptions import ConvergenceError, DegenerateError, DomainError
from .families import get_family
from .fitter.linalg import chol_solve, ridge_cholesky


# --------------------------------------------------------------------- binning
@dataclass
class BinSpec:
    """Bin centers with a common inclusion radius ``halfwidth``."""

    centers: np.ndarray
    halfwidth: float
    domain: tuple = (0.0, 1.0)
    cyclic: bool = False

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).ravel()
        if self.centers.size == 0:
            raise ValueError("at least one bin center is required")
        if np.any(np.diff(self.centers) <= 0):
            raise ValueError("bin centers must be strictly increasing")
        if self.halfwidth < 0:
            raise ValueError("halfwidth must be nonnegative")
        self.domain = (float(self.domain[0]), float(self.domain[1]))

    @classmethod
    def equidistant(cls, n_bins=11, halfwidth=0.3, domain=(0.0, 1.0), cyclic=False):
        lo, hi = domain
        if cyclic:
            centers = lo + np.arange(n_bins) * (hi - lo) / n_bins
        else:
            centers = np.linspace(lo, hi, n_bins)
        return cls(centers, halfwidth, domain, cyclic)

    @property
    def n_bins(self):
        return self.centers.size

    def distance(self, t):
        """Distances (n, n_bins) between times and centers, wrapped on cyclic domains."""
        d = np.abs(np.asarray(t, dtype=float)[:, None] - self.centers[None, :])
        if self.cyclic:
            period = self.domain[1] - self.domain[0]
            d = np.minimum(d, period - d)
        return d

    def membership(self, t):
        tol = 1e-12 * max(1.0, self.domain[1] - self.domain[0])
        return self.distance(t) <= self.halfwidth + tol


def bin_data(t, bins: BinSpec):
    """Row indices of the observations in every bin.

    Empty bins produce a ``RuntimeWarning`` and an empty index array.

    Raises
    ------
    DomainError
        If some observation falls into no bin.
    """
    member = bins.membership(np.asarray(t, dtype=float))
    uncovered = ~member.any(axis=1)
    if np.any(uncovered):
        raise DomainError(f"{int(uncovered.sum())} observations fall into no bin")
    out = []
    for s in range(bins.n_bins):
        idx = np.flatnonzero(member[:, s])
        if idx.size == 0:
            warnings.warn(f"bin centered at {bins.centers[s]:g} is empty", RuntimeWarning)
        out.append(idx)
    return out


# ------------------------------------------------------- local mixed models
@dataclass
class LocalFit:
    """Result of a scalar generalized mixed model.

    ``random[l]`` holds the modes of the random intercepts of grouping level
    ``l``; ``variances[l]`` their estimated variance.  ``fixed[r]`` are the
    fixed-effect coefficients of distributional parameter ``r`` (1-based).
    """

    fixed: dict
    random: list
    variances: np.ndarray
    converged: bool
    n_iter: int


class _LaplaceModel:
    def __init__(self, y, family, X, levels):
        self.y = y
        self.fam = family
        self.X = X
        self.n = y.size
        self.q = [int(n_l) for _, n_l in levels]
        self.Z = sparse.hstack(
            [sparse.csr_matrix((np.ones(self.n), (idx, np.arange(self.n))), shape=(n_l, self.n)).T for idx, n_l in levels]
        ).tocsr()
        self.p1 = X[1].shape[1]
        self.level_of = np.repeat(np.arange(len(levels)), self.q)
        starts = family.start_eta(y)
        self.beta = {r: np.zeros(X[r].shape[1]) for r in X}
        for r in X:
            # intercept columns come first
            self.beta[r][0] = starts[r - 1]
        self.b = np.zeros(sum(self.q))

    def _eta(self, beta, b):
        eta = [self.X[r] @ beta[r] for r in sorted(self.X)]
        eta[0] = eta[0] + self.Z @ b
        return eta

    def _penalized(self, beta, b, prec):
        ll = self.fam.loglik_eta(self.y, self._eta(beta, b))
        return float(np.sum(ll) - 0.5 * np.sum(prec * b * b))

    def _location_system(self, beta, b, prec):
        d = self.fam.derivatives_unchecked(self.y, self._eta(beta, b))
        s = d.score[0]
        w = np.maximum(-d.hess[0], 1e-10)
        X1, Z = self.X[1], self.Z
        g = np.concatenate([X1.T @ s, Z.T @ s - prec * b])
        WX = X1 * w[:, None]
        ZtW = Z.T.multiply(w).tocsr()
        H = np.empty((self.p1 + self.b.size,) * 2)
        H[: self.p1, : self.p1] = X1.T @ WX
        H[: self.p1, self.p1 :] = (ZtW @ X1).T
        H[self.p1 :, : self.p1] = ZtW @ X1
        H[self.p1 :, self.p1 :] = (ZtW @ Z).toarray() + np.diag(prec)
        return g, H

    def solve_mode(self, log_var, max_iter=100, tol=1e-8):
        prec = np.exp(-np.asarray(log_var))[self.level_of]
        beta = {r: v.copy() for r, v in self.beta.items()}
        b = self.b.copy()
        obj = self._penalized(beta, b, prec)
        converged = False
        for it in range(1, max_iter + 1):
            g, H = self._location_system(beta, b, prec)
            L, _ = ridge_cholesky(H)
            step = chol_solve(L, g)
            t = 1.0
            for _ in range(30):
                nb = {**beta, 1: beta[1] + t * step[: self.p1]}
                nbb = b + t * step[self.p1 :]
                new = self._penalized(nb, nbb, prec)
                if np.isfinite(new) and new >= obj - 1e-12:
                    break
                t *= 0.5
            else:
                nb, nbb, new = beta, b, obj
            beta, b, change = nb, nbb, new - obj
            obj = new
            max_step = t * np.max(np.abs(step)) if step.size else 0.0
            for r in sorted(self.X)[1:]:
                d = self.fam.derivatives_unchecked(self.y, self._eta(beta, b))
                Xr = self.X[r]
                gr = Xr.T @ d.score[r - 1]
                Hr = Xr.T @ (Xr * np.maximum(-d.hess[r - 1], 1e-10)[:, None])
                Lr, _ = ridge_cholesky(Hr)
                sr = chol_solve(Lr, gr)
                t = 1.0
                for _ in range(30):
                    cand = {**beta, r: beta[r] + t * sr}
                    new = self._penalized(cand, b, prec)
                    if np.isfinite(new) and new >= obj - 1e-12:
                        break
                    t *= 0.5
                else:
                    cand, new = beta, obj
                beta = cand
                change += new - obj
                obj = new
                max_step = max(max_step, t * float(np.max(np.abs(sr))))
            if max_step < tol or abs(change) < tol * (1.0 + abs(obj)):
                converged = True
                break
        g, H = self._location_system(beta, b, prec)
        return beta, b, obj, H, converged, it

    def laplace(self, log_var):
        log_var = np.atleast_1d(log_var)
        beta, b, obj, H, converged, it = self.solve_mode(log_var)
        self.beta, self.b = beta, b  # warm start for the next evaluation
        L, _ = ridge_cholesky(H)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        value = obj - 0.5 * float(np.dot(self.q, log_var)) - 0.5 * logdet
        return -value, converged, it


def fit_local_mixed_model(y, family, fixed, levels, bounds=(-12.0, 6.0)):
    """Laplace-approximate scalar generalized mixed model with random intercepts.

    Parameters
    ----------
    y : array (n,)
    family : str or Family
    fixed : dict
        Fixed-effect design per distributional parameter (1-based), each an
        (n, p_r) array whose first column is the intercept.  Parameters that
        are missing get an intercept only.
    levels : list of (index, n_levels)
        Random-intercept grouping of the location predictor; ``index`` maps
        each observation to its level.
    bounds : tuple
        Search interval for the log random-effect variances.

    Returns
    -------
    LocalFit
    """
    fam = get_family(family) if isinstance(family, str) else family
    y = np.asarray(y, dtype=float)
    n = y.size
    X = {r: np.ones((n, 1)) for r in range(1, fam.n_params + 1)}
    for r, Xr in (fixed or {}).items():
        X[int(r)] = np.asarray(Xr, dtype=float).reshape(n, -1)
    levels = [(np.asarray(idx, dtype=int), int(n_l)) for idx, n_l in levels]
    for idx, _ in levels:
        if np.unique(idx).size < 2:
            raise DegenerateError("a local mixed model needs at least two levels with data")
    model = _LaplaceModel(y, fam, X, levels)
    lo, hi = bounds
    start = np.log(max(np.var(y), 1e-2)) * np.ones(len(levels))
    if len(levels) == 1:
        res = optimize.minimize_scalar(lambda v: model.laplace([v])[0], bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-4})
        log_var = np.array([res.x])
        ok = bool(res.success)
    else:
        res = optimize.minimize(lambda v: model.laplace(np.clip(v, lo, hi))[0], start, method="Nelder-Mead",
                                options={"xatol": 1e-4, "fatol": 1e-8, "maxiter": 400})
        log_var = np.clip(res.x, lo, hi)
        ok = bool(res.success)
    beta, b, _, _, converged, it = model.solve_mode(log_var)
    random = []
    start_i = 0
    for n_l in model.q:
        random.append(b[start_i : start_i + n_l])
        start_i += n_l
    return LocalFit(beta, random, np.exp(log_var), bool(converged and ok), it)


# ------------------------------------------------------------ latent matrix
@dataclass
class LatentMatrix:
    """Estimated random intercepts, one row per level (unit or curve), one column per bin.

    ``cov`` optionally replaces the sample covariance of the rows, e.g. by a
    method-of-moments corrected estimate.
    """

    values: np.ndarray
    keys: np.ndarray
    centers: np.ndarray
    level: str = "unit"
    cov: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("latent matrix entries must be finite")

    def covariance(self):
        if self.cov is not None:
            return self.cov
        n = self.values.shape[0]
        centered = self.values - self.values.mean(axis=0)
        return centered.T @ centered / (n - 1)


def _interpolate_failed(values, centers, ok, cyclic, domain):
    if ok.sum() < 2:
        raise DegenerateError("fewer than two usable bins")
    if ok.all():
        return values
    out = values.copy()
    period = (domain[1] - domain[0]) if cyclic else None
    for i in range(values.shape[0]):
        out[i, ~ok] = np.interp(centers[~ok], centers[ok], values[i, ok], period=period)
    return out


# ------------------------------------------------------- univariate FPCA
@dataclass
class UnivariateFPCA:
    """Smoothed univariate eigenfunctions on ``grid`` with eigenvalues and scores."""

    grid: np.ndarray
    phi: np.ndarray
    upsilon: np.ndarray
    pve: float
    level: str = "unit"
    scores: np.ndarray | None = None
    keys: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def M(self):
        return self.phi.shape[0]

    def evaluate(self, times):
        basis = self.to_eigenbasis()
        return basis.evaluate(1, times)

    def to_eigenbasis(self):
        return EigenBasis(self.grid, self.phi[:, None, :], self.upsilon, [1.0], self.level)

    def with_scores(self, scores, keys):
        return UnivariateFPCA(self.grid, self.phi, self.upsilon, self.pve, self.level,
                              np.asarray(scores, dtype=float), np.asarray(keys), dict(self.meta))

    def save(self, csv_path, json_path=None):
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path is not None else csv_path.with_suffix(".json")
        M, G = self.phi.shape
        m, g = np.meshgrid(np.arange(1, M + 1), np.arange(G), indexing="ij")
        pd.DataFrame({"m": m.ravel(), "t": self.grid[g.ravel()], "value": self.phi.ravel()}).to_csv(
            csv_path, index=False, float_format="%.17g"
        )
        meta = {
            "level": self.level,
            "M": M,
            "pve": self.pve,
            "upsilon": self.upsilon.tolist(),
            "scores": None if self.scores is None else self.scores.tolist(),
            "keys": None if self.keys is None else np.asarray(self.keys).tolist(),
            "meta": self.meta,
        }
        json_path.write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, csv_path, json_path=None):
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path is not None else csv_path.with_suffix(".json")
        meta = json.loads(json_path.read_text())
        frame = pd.read_csv(csv_path, float_precision="round_trip")
        grid = np.unique(frame["t"].to_numpy())
        phi = np.zeros((int(meta["M"]), grid.size))
        phi[frame["m"].to_numpy() - 1, np.searchsorted(grid, frame["t"].to_numpy())] = frame["value"].to_numpy()
        scores = None if meta["scores"] is None else np.asarray(meta["scores"], dtype=float)
        keys = None if meta["keys"] is None else np.asarray(meta["keys"])
        return cls(grid, phi, np.asarray(meta["upsilon"], dtype=float), meta["pve"], meta["level"], scores, keys,
                   meta.get("meta", {}))


def smooth_covariance(cov, rows, centers, grid, n_smooth_basis=7, cyclic=False, domain=(0.0, 1.0),
                      log_lambda_grid=np.linspace(-8.0, 6.0, 57)):
    """Sandwich P-spline smooth of a covariance matrix tabulated at ``centers``.

    A penalized spline smoother ``A = (B'B + lambda P)^{-1} B'`` is fitted to
    the rows of the latent matrix with ``lambda`` minimizing generalized
    cross-validation, and the smoothed covariance is ``B_grid A cov A' B_grid'``.
    Smoothing the rows first and then taking their covariance is the same
    operation, so the estimation noise of the rows stays in the spectrum.

    Returns the smoothed covariance on ``grid`` and the selected log10 smoothing
    parameter.
    """
    nk = n_knots_for(n_smooth_basis, 3, cyclic)
    Bc = np.asarray(bspline_design(nk, 3, centers, cyclic, domain))
    Bg = np.asarray(bspline_design(nk, 3, grid, cyclic, domain))
    d = Bc.shape[1]
    P = np.asarray(difference_penalty(d, 2, cyclic))
    S = len(centers)
    Y = rows - rows.mean(axis=0)
    BtB = Bc.T @ Bc
    BtY = Bc.T @ Y.T
    best = None
    for ll in log_lambda_grid:
        A = BtB + 10.0**ll * P
        try:
            coef = np.linalg.solve(A, BtY)
            edf = float(np.trace(np.linalg.solve(A, BtB)))
        except np.linalg.LinAlgError:
            continue
        if edf >= S - 1e-8:
            continue
        rss = float(np.sum((Y.T - Bc @ coef) ** 2))
        gcv = rss / (1.0 - edf / S) ** 2
        if best is None or gcv < best[0] - 1e-12 * abs(best[0]):
            best = (gcv, ll)
    if best is None:
        raise DegenerateError("covariance smoothing failed for every smoothing parameter")
    A = np.linalg.solve(BtB + 10.0 ** best[1] * P, Bc.T)
    Theta = A @ cov @ A.T
    Theta = 0.5 * (Theta + Theta.T)
    return Bg @ Theta @ Bg.T, float(best[1])


def fast_covariance_fpca(latent: LatentMatrix, pve=0.99, n_smooth_basis=7, cyclic=False, domain=(0.0, 1.0),
                         grid=None):
    """Eigenfunctions of the smoothed covariance of a latent matrix.

    Eigenfunctions are tabulated on ``grid`` (101 equidistant points on the
    domain by default), normalized under trapezoid quadrature and signed so
    that their largest absolute value is positive.  The number of functions is
    the smallest count explaining at least ``pve`` of the positive spectrum.
    Preliminary scores project the latent rows onto the eigenfunctions.

    Raises
    ------
    DegenerateError
        If the latent matrix shows no variation.
    """
    vals = latent.values
    if vals.shape[0] < 3 or vals.shape[1] < 3:
        raise DegenerateError("need at least three rows and three bins")
    cov = latent.covariance()
    if not np.any(np.abs(cov) > 1e-14 * max(1.0, np.abs(vals).max())):
        raise DegenerateError("latent matrix has zero variance")
    grid = np.linspace(domain[0], domain[1], 101) if grid is None else np.asarray(grid, dtype=float)
    smooth, log_lambda = smooth_covariance(cov, vals, latent.centers, grid, n_smooth_basis, cyclic, domain)
    q = trapezoid_weights(grid)
    sq = np.sqrt(q)
    A = sq[:, None] * smooth * sq[None, :]
    ev, vec = np.linalg.eigh(0.5 * (A + A.T))
    order = np.argsort(ev)[::-1]
    ev = ev[order]
    vec = vec[:, order]
    pos = ev > 1e-12 * max(ev[0], 0.0)
    if not np.any(pos) or ev[0] <= 0:
        raise DegenerateError("smoothed covariance has no positive eigenvalue")
    ev = ev[pos]
    vec = vec[:, pos]
    ratio = np.cumsum(ev) / np.sum(ev)
    M = int(np.searchsorted(ratio, pve - 1e-12) + 1)
    M = min(M, ev.size)
    phi = (vec[:, :M] / sq[:, None]).T
    idx = np.argmax(np.abs(phi), axis=1)
    phi *= np.sign(phi[np.arange(M), idx])[:, None]
    fpca = UnivariateFPCA(grid, phi, ev[:M], float(pve), latent.level,
                          meta={"log10_lambda": log_lambda, "n_smooth_basis": n_smooth_basis})
    at_centers = fpca.to_eigenbasis().evaluate(1, latent.centers)
    centered = vals - vals.mean(axis=0)
    scores = np.linalg.lstsq(at_centers, centered.T, rcond=None)[0].T
    return fpca.with_scores(scores, latent.keys)


def multilevel_split(latent: LatentMatrix):
    """Split curve-level intercepts of a nested design into between and within parts.

    ``latent.keys`` has rows ``(unit, group)``.  The between matrix holds unit
    averages, the within matrix the deviations of each curve from its unit
    average.  Covariances are method-of-moments corrected: with ``J_i``
    curves in unit ``i`` the within covariance is the pooled deviation
    covariance divided by ``sum_i (J_i - 1) / n_curves``, and the between
    covariance is the covariance of the unit averages minus
    ``mean_i(1 / J_i)`` times the within covariance.  Units with a single
    curve contribute only to the between part.
    """
    keys = np.asarray(latent.keys)
    if keys.ndim != 2 or keys.shape[1] != 2:
        raise ValueError("a nested latent matrix needs (unit, group) keys")
    vals = latent.values
    units, inv = np.unique(keys[:, 0], return_inverse=True)
    inv = inv.ravel()
    J = np.bincount(inv)
    means = np.zeros((units.size, vals.shape[1]))
    np.add.at(means, inv, vals)
    means /= J[:, None]
    dev = vals - means[inv]
    dof = float(np.sum(J - 1))
    if dof > 0:
        K0 = dev.T @ dev / dof
    else:
        K0 = np.zeros((vals.shape[1],) * 2)
    cm = means - means.mean(axis=0)
    between_raw = cm.T @ cm / max(units.size - 1, 1)
    K1 = between_raw - np.mean(1.0 / J) * K0
    between = LatentMatrix(means, units, latent.centers, "unit", K1)
    within = LatentMatrix(dev, keys, latent.centers, "group", K0)
    return between, within


# ---------------------------------------------------------- score refitting
@dataclass
class RefitConfig:
    """How scores are re-estimated over the whole domain.

    ``method`` is ``"mcmc"`` (posterior means), ``"mode"`` (backfitted
    posterior mode) or ``"none"`` (keep the binned scores).
    """

    method: str = "mcmc"
    burnin: int = 500
    draws: int = 500
    thin: int = 1
    seed: int = 0
    d_t: int = 14

    def __post_init__(self):
        if self.method not in ("mcmc", "mode", "none"):
            raise ValueError(f"unknown refit method {self.method!r}")


def refit_scores(dataset_dim, fpcas: dict, location_covariates=(), scale_covariates=(), config: RefitConfig | None = None):
    """Posterior scores of the univariate eigenfunctions in a whole-domain model.

    Parameters
    ----------
    dataset_dim : MultivariateFunctionalDataset
        One-dimension dataset.
    fpcas : dict
        Level name (``"unit"`` or ``"group"``) to :class:`UnivariateFPCA`.
    location_covariates, scale_covariates : sequence of str
        Linear functional effects on the location predictor and linear effects
        on further distributional parameters.

    Returns
    -------
    dict
        Level name to a copy of the FPCA carrying the refitted scores.
    """
    from .fitter import (BackfitConfig, LatentSpec, SamplerConfig, backfit_init, build_design,
                         functional_regression_spec, mcmc_sample)

    cfg = config or RefitConfig()
    if cfg.method == "none":
        return dict(fpcas)
    if dataset_dim.K != 1:
        raise ValueError("refit_scores expects a one-dimension dataset")
    latents = [LatentSpec(level, f.to_eigenbasis()) for level, f in fpcas.items()]
    spec = functional_regression_spec(
        dataset_dim.family_tags, covariates=tuple(location_covariates), scale_covariates=tuple(scale_covariates),
        latent=latents, d_t=cfg.d_t, domain=dataset_dim.domain, cyclic=dataset_dim.cyclic,
    )
    design = build_design(dataset_dim, spec)
    init = backfit_init(design, BackfitConfig())
    if cfg.method == "mode":
        scores = [init.state.scores[j] for j in range(len(latents))]
    else:
        samples = mcmc_sample(design, init, SamplerConfig(burnin=cfg.burnin, draws=cfg.draws, thin=cfg.thin,
                                                          seed=cfg.seed))
        scores = [samples.mean(lat.name + "/scores") for lat in design.latents]
    out = {}
    for j, (level, f) in enumerate(fpcas.items()):
        lat = design.latents[j]
        out[level] = f.with_scores(scores[j], lat.level_keys)
    return out


# ------------------------------------------------------------ orchestration
@dataclass
class GFPCAConfig:
    """Settings of :func:`univariate_gfpca`; ``bins`` defaults to 11 centers with halfwidth 0.3."""

    bins: BinSpec | None = None
    pve: float = 0.99
    n_smooth_basis: int = 7
    location_covariates: tuple = ()
    scale_covariates: tuple = ()
    refit: RefitConfig = field(default_factory=RefitConfig)
    grid_size: int = 101

    def bins_for(self, domain, cyclic):
        if self.bins is not None:
            return self.bins
        return BinSpec.equidistant(11, 0.3 * (domain[1] - domain[0]), domain, cyclic)


def binned_latent_matrix(dataset_dim, bins: BinSpec, location_covariates=(), scale_covariates=()):
    """Random intercepts of every bin's local mixed model as a :class:`LatentMatrix`.

    The random intercept is per curve (per unit when there is no group
    column).  Curves without data in a bin get their prior mean, zero.  Bins
    whose model cannot be fitted are filled by interpolation from neighbors
    and listed in ``meta['failed_bins']`` of the returned object's caller.
    """
    fam = get_family(dataset_dim.family_tags[0])
    keys = dataset_dim.curves()
    curve = dataset_dim.curve_index()
    members = bin_data(dataset_dim.t, bins)
    values = np.zeros((len(keys), bins.n_bins))
    ok = np.ones(bins.n_bins, dtype=bool)
    variances = np.full(bins.n_bins, np.nan)
    for s, rows in enumerate(members):
        if rows.size == 0:
            ok[s] = False
            continue
        c_rows = curve[rows]
        present, local = np.unique(c_rows, return_inverse=True)
        fixed = {1: np.column_stack([np.ones(rows.size)] + [dataset_dim.covariates[c][rows] for c in location_covariates])}
        for r in range(2, fam.n_params + 1):
            fixed[r] = np.column_stack([np.ones(rows.size)] + [dataset_dim.covariates[c][rows] for c in scale_covariates])
        try:
            fit = fit_local_mixed_model(dataset_dim.y[rows], fam, fixed, [(local.ravel(), present.size)])
        except (DegenerateError, ConvergenceError, np.linalg.LinAlgError) as err:
            warnings.warn(f"local model of bin {s} failed ({err}); interpolating", RuntimeWarning)
            ok[s] = False
            continue
        values[present, s] = fit.random[0]
        variances[s] = fit.variances[0]
    values = _interpolate_failed(values, bins.centers, ok, bins.cyclic, bins.domain)
    level = "unit" if dataset_dim.group is None else "group"
    return LatentMatrix(values, keys, bins.centers, level), {"failed_bins": np.flatnonzero(~ok).tolist(),
                                                             "bin_variances": variances.tolist()}


def univariate_gfpca(dataset_dim, config: GFPCAConfig | None = None):
    """Univariate generalized FPCA of a one-dimension dataset.

    Returns a dict mapping level names to :class:`UnivariateFPCA`: only
    ``"unit"`` without a group column, ``"unit"`` and ``"group"`` for nested
    designs.
    """
    cfg = config or GFPCAConfig()
    bins = cfg.bins_for(dataset_dim.domain, dataset_dim.cyclic)
    latent, info = binned_latent_matrix(dataset_dim, bins, cfg.location_covariates, cfg.scale_covariates)
    grid = np.linspace(dataset_dim.domain[0], dataset_dim.domain[1], cfg.grid_size)
    if dataset_dim.group is None:
        parts = {"unit": latent}
    else:
        between, within = multilevel_split(latent)
        parts = {"unit": between, "group": within}
    fpcas = {}
    for level, lm in parts.items():
        f = fast_covariance_fpca(lm, cfg.pve, cfg.n_smooth_basis, dataset_dim.cyclic, dataset_dim.domain, grid)
        f.meta.update(info)
        fpcas[level] = f
    return refit_scores(dataset_dim, fpcas, cfg.location_covariates, cfg.scale_covariates, cfg.refit)
