"""Backfitting towards the posterior mode, used to start the samplers."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ConvergenceError
from .linalg import batched_chol_solve, batched_ridge_cholesky, chol_solve, ridge_cholesky
from .posterior import (
    State,
    compute_eta,
    derivatives,
    initial_state,
    latent_gradient,
    log_likelihood,
    loglik_rows,
)

log = logging.getLogger(__name__)


@dataclass
class BackfitConfig:
    """Iteration caps and smoothing grids.

    ``tau_grid`` holds candidate variances for penalized terms;
    ``nu_scale_grid`` multiplies the eigenvalues of a latent basis to give
    candidate score variances.
    """

    max_cycles: int = 100
    tol: float = 1e-4
    tau_grid: tuple = tuple(np.logspace(-4, 3, 8))
    nu_scale_grid: tuple = tuple(np.logspace(-2, 1.5, 8))
    max_halvings: int = 12
    select_variances: bool = True


@dataclass
class BackfitResult:
    state: State
    converged: bool
    cycles: int
    trace: list = field(default_factory=list)


def _aicc(ll, edf, n):
    denom = n - edf - 1.0
    corr = 2.0 * edf * (edf + 1.0) / denom if denom > 0 else np.inf
    return -2.0 * ll + 2.0 * edf + corr


def _term_objective(design, blk, beta, tau2, eta_k):
    ll = float(np.sum(loglik_rows(design, blk.k, eta_k)))
    Q = blk.precision(tau2, design.vague_sd)
    return ll - 0.5 * float(beta @ Q @ beta), ll


def _update_term(design, state, j, cfg):
    blk = design.terms[j]
    k, r = blk.k, blk.r
    beta = state.coefs[j]
    eta_k = state.eta[k]
    d = derivatives(design, k, eta_k)
    s = d.score[r - 1]
    W = -d.hess[r - 1]
    X = blk.X
    XtWX = (X * W[:, None]).T @ X
    g_lik = X.T @ s
    n = X.shape[0]

    if not blk.penalized or not cfg.select_variances:
        candidates = [state.tau2[j]]
    elif blk.n_tau == 1:
        candidates = [np.array([v]) for v in cfg.tau_grid]
    else:
        candidates = [np.array(p) for p in itertools.product(cfg.tau_grid, repeat=2)]

    best = None
    for tau2 in candidates:
        Q = blk.precision(tau2, design.vague_sd)
        A = XtWX + Q
        L, _ = ridge_cholesky(A)
        step = chol_solve(L, g_lik - Q @ beta)
        new_eta = eta_k.copy()
        new_eta[r - 1] += X @ step
        ll = float(np.sum(loglik_rows(design, k, new_eta)))
        if not np.isfinite(ll):
            continue
        edf = float(np.trace(chol_solve(L, XtWX)))
        crit = _aicc(ll, edf, n) if len(candidates) > 1 else 0.0
        if best is None or crit < best[0]:
            best = (crit, tau2, step)
    if best is None:
        return False
    _, tau2, step = best
    old_obj, _ = _term_objective(design, blk, beta, tau2, eta_k)
    for _ in range(cfg.max_halvings + 1):
        new_beta = beta + step
        new_eta = eta_k.copy()
        new_eta[r - 1] += X @ step
        obj, _ = _term_objective(design, blk, new_beta, tau2, new_eta)
        if np.isfinite(obj) and obj >= old_obj - 1e-10 * abs(old_obj):
            state.coefs[j] = new_beta
            state.tau2[j] = np.asarray(tau2, dtype=float)
            state.eta[k] = new_eta
            return True
        step = step / 2.0
    state.tau2[j] = np.asarray(tau2, dtype=float)
    return False


def _latent_objective(design, lat, rho, nu, eta):
    ll = 0.0
    for k in lat.dims:
        ll += float(np.sum(loglik_rows(design, k, eta[k])))
    act = lat.active
    return ll - 0.5 * float(np.sum(rho[:, act] ** 2 / nu[act])), ll


def _shift_eta(design, lat, eta, delta):
    out = dict(eta)
    for k in lat.dims:
        idx = lat.index[k]
        known = idx >= 0
        e = eta[k].copy()
        e[0, known] += np.einsum("nm,nm->n", lat.psi[k][known], delta[idx[known]])
        out[k] = e
    return out


def _update_latent(design, state, u, cfg):
    lat = design.latents[u]
    act = np.flatnonzero(lat.active)
    if act.size == 0:
        return True
    rho = state.scores[u]
    nu0 = np.maximum(np.asarray(lat.basis.nu, dtype=float), 0.0)
    derivs = {k: derivatives(design, k, state.eta[k]) for k in lat.dims}
    # likelihood parts of gradient and Hessian (prior added per candidate)
    g_lik, H_lik = latent_gradient(design, state, u, derivs, include_prior=False)
    g_lik = g_lik[:, act]
    neg_H = -H_lik[:, act][:, :, act]
    n_rows = lat.index_all.size
    scales = cfg.nu_scale_grid
    if not cfg.select_variances:
        nu0 = state.nu[u]
        scales = (1.0,)

    best = None
    for c in scales:
        nu = np.zeros(lat.M)
        nu[act] = c * nu0[act]
        prec = 1.0 / nu[act]
        A = neg_H + np.diag(prec)[None]
        L, _ = batched_ridge_cholesky(A)
        grad = g_lik - rho[:, act] * prec
        step = np.zeros_like(rho)
        step[:, act] = batched_chol_solve(L, grad)
        new_eta = _shift_eta(design, lat, state.eta, step)
        _, ll = _latent_objective(design, lat, rho + step, np.where(lat.active, nu, 1.0), new_eta)
        if not np.isfinite(ll):
            continue
        # edf = sum_i tr(A_i^{-1} (A_i - prior precision))
        inv_diag = np.diagonal(batched_chol_solve_identity(L), axis1=1, axis2=2)
        edf = float(np.sum(1.0 - inv_diag * prec[None, :]))
        crit = _aicc(ll, edf, n_rows) if len(scales) > 1 else 0.0
        if best is None or crit < best[0]:
            best = (crit, nu, step)
    if best is None:
        return False
    _, nu, step = best
    nu_safe = np.where(lat.active, nu, 1.0)
    old_obj, _ = _latent_objective(design, lat, rho, nu_safe, state.eta)
    for _ in range(cfg.max_halvings + 1):
        new_rho = rho + step
        new_eta = _shift_eta(design, lat, state.eta, step)
        obj, _ = _latent_objective(design, lat, new_rho, nu_safe, new_eta)
        if np.isfinite(obj) and obj >= old_obj - 1e-10 * abs(old_obj):
            state.scores[u] = new_rho
            state.nu[u] = nu
            state.eta = new_eta
            return True
        step = step / 2.0
    state.nu[u] = nu
    return False


def batched_chol_solve_identity(L):
    n, M, _ = L.shape
    eye = np.broadcast_to(np.eye(M), (n, M, M))
    Linv = np.linalg.solve(L, eye)
    return np.swapaxes(Linv, 1, 2) @ Linv


def _fixed_objective(design, state):
    """Log-likelihood plus quadratic prior terms at the current variances."""
    total = log_likelihood(design, state)
    for blk, beta, t2 in zip(design.terms, state.coefs, state.tau2):
        Q = blk.precision(t2, design.vague_sd)
        total -= 0.5 * float(beta @ Q @ beta)
    for lat, rho, nu in zip(design.latents, state.scores, state.nu):
        act = lat.active
        total -= 0.5 * float(np.sum(rho[:, act] ** 2 / nu[act]))
    return total


def backfit_init(design, config: BackfitConfig | None = None, state: State | None = None) -> BackfitResult:
    """Cycle Newton updates over all blocks to approximate the posterior mode.

    Each penalized block picks its variance parameter(s) from a log grid by
    the corrected AIC of the updated fit; latent blocks pick a common
    multiplier of the basis eigenvalues the same way.  Stops when the largest
    relative change of any predictor falls below ``config.tol``.

    Raises
    ------
    ConvergenceError
        When the objective decreases in two consecutive cycles.
    """
    cfg = config or BackfitConfig()
    state = initial_state(design) if state is None else state.copy()
    trace = []
    decreases = 0
    converged = False
    cycle = 0
    for cycle in range(1, cfg.max_cycles + 1):
        start = state.copy()
        for j in range(len(design.terms)):
            _update_term(design, state, j, cfg)
        for u in range(len(design.latents)):
            _update_latent(design, state, u, cfg)
        # compare start and end under the variances now in effect
        probe = State(start.coefs, state.tau2, start.scores, state.nu, start.eta)
        before = _fixed_objective(design, probe)
        after = _fixed_objective(design, state)
        change = 0.0
        for k in state.eta:
            old = start.eta[k]
            change = max(change, float(np.linalg.norm(state.eta[k] - old) / max(np.linalg.norm(old), 1e-8)))
        trace.append({"cycle": cycle, "objective": after, "change": change})
        if after < before - 1e-8 * max(abs(before), 1.0):
            decreases += 1
            if decreases >= 2:
                raise ConvergenceError("backfitting diverged: objective decreased in two consecutive cycles", trace)
        else:
            decreases = 0
        if not np.isfinite(after):
            raise ConvergenceError("backfitting produced a non-finite objective", trace)
        if change < cfg.tol:
            converged = True
            break
    if not converged:
        log.info("backfitting stopped after %d cycles without reaching tol=%g", cycle, cfg.tol)
    state.eta = compute_eta(design, state.coefs, state.scores)
    return BackfitResult(state, converged, cycle, trace)
