"""Posterior predictions of predictors and distributional parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import PredictionError


@dataclass
class Prediction:
    """Pointwise posterior summaries for one (dimension, parameter).

    ``mean`` is the posterior mean of the parameter on the response scale
    (links applied per draw before averaging); ``eta_mean`` the posterior
    mean of the predictor.
    """

    dim: int
    param: int
    t: np.ndarray
    unit: np.ndarray
    mean: np.ndarray
    eta_mean: np.ndarray
    quantiles: dict = field(default_factory=dict)
    group: np.ndarray | None = None


def _term_draws(samples, blk):
    return samples.draws(blk.name + "/coef")


def eta_draws(samples, design, k, r, rows=None):
    """Predictor draws (n_rows, n_draws) for dimension ``k``, parameter ``r``."""
    n_k = design.rows[k].size
    rows = np.arange(n_k) if rows is None else np.asarray(rows)
    D = samples.n_chains * samples.n_draws
    out = np.zeros((rows.size, D))
    for blk in design.terms_of(k, r):
        out += blk.X[rows] @ _term_draws(samples, blk).T
    if r == 1:
        for lat in design.latents:
            if k not in lat.dims:
                continue
            idx = lat.index[k][rows]
            known = idx >= 0
            if not np.any(known):
                continue
            scores = samples.draws(lat.name + "/scores")  # (D, n_levels, M)
            psi = lat.psi[k][rows][known]
            out[known] += np.einsum("nm,dnm->nd", psi, scores[:, idx[known], :])
    return out


def posterior_mean_eta(samples, design):
    """Posterior mean of every predictor, computed from posterior-mean parameters (exact: predictors are linear)."""
    out = {}
    for k in range(1, design.K + 1):
        eta = np.zeros((design.n_params[k - 1], design.rows[k].size))
        for blk in design.terms:
            if blk.k == k:
                eta[blk.r - 1] += blk.X @ samples.mean(blk.name + "/coef")
        for lat in design.latents:
            if k not in lat.dims:
                continue
            idx = lat.index[k]
            known = idx >= 0
            rho = samples.mean(lat.name + "/scores")
            eta[0, known] += np.einsum("nm,nm->n", lat.psi[k][known], rho[idx[known]])
        out[k] = eta
    return out


def predict(samples, design, quantiles=(0.025, 0.5, 0.975), chunk=2000):
    """Posterior mean and pointwise quantiles of all parameters on ``design`` rows.

    ``design`` is typically ``training_design.for_newdata(newdata)``.
    Returns a dict keyed by ``(dim, param)``.
    """
    qs = np.asarray(quantiles, dtype=float)
    if np.any((qs < 0) | (qs > 1)):
        raise PredictionError("quantiles must lie in [0, 1]")
    results = {}
    for k in range(1, design.K + 1):
        fam = design.families[k - 1]
        n_k = design.rows[k].size
        for r in range(1, design.n_params[k - 1] + 1):
            link = fam.links[r - 1]
            mean = np.empty(n_k)
            eta_mean = np.empty(n_k)
            qv = np.empty((qs.size, n_k))
            for start in range(0, n_k, chunk):
                rows = np.arange(start, min(start + chunk, n_k))
                eta = eta_draws(samples, design, k, r, rows)
                theta = link.inverse(eta)
                mean[rows] = theta.mean(axis=1)
                eta_mean[rows] = eta.mean(axis=1)
                if qs.size:
                    qv[:, rows] = np.quantile(theta, qs, axis=1)
            results[(k, r)] = Prediction(
                k, r, design.t[k], design.units[k], mean, eta_mean,
                {float(q): qv[i] for i, q in enumerate(qs)}, design.groups[k],
            )
    return results


def effect_curve_draws(samples, design, term_name, grid):
    """Draws (n_draws, len(grid)) of a functional effect's coefficient function in t."""
    blk = next((b for b in design.terms if b.name == term_name), None)
    if blk is None:
        raise PredictionError(f"unknown term {term_name!r}")
    if blk.kind not in ("functional-intercept", "linear-functional"):
        raise PredictionError(f"term {term_name!r} has no coefficient function in t")
    Bt = blk.term.basis_in_t(grid)
    return _term_draws(samples, blk) @ Bt.T
