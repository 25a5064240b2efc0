"""Parameter state, log-posterior and block derivatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ..exceptions import DomainError
from .design import DesignBlocks

_LOG2PI = np.log(2.0 * np.pi)


@dataclass
class State:
    """Current values of all parameter blocks.

    ``eta[k]`` has shape ``(R_k, N_k)`` and is kept in sync with the
    coefficients and scores by the samplers.
    """

    coefs: list
    tau2: list
    scores: list
    nu: list
    eta: dict

    def copy(self):
        return State(
            [c.copy() for c in self.coefs],
            [t.copy() for t in self.tau2],
            [s.copy() for s in self.scores],
            [n.copy() for n in self.nu],
            {k: e.copy() for k, e in self.eta.items()},
        )


def compute_eta(design: DesignBlocks, coefs, scores):
    eta = {k: np.zeros((design.n_params[k - 1], design.rows[k].size)) for k in range(1, design.K + 1)}
    for blk, beta in zip(design.terms, coefs):
        eta[blk.k][blk.r - 1] += blk.X @ beta
    for lat, rho in zip(design.latents, scores):
        for k in lat.dims:
            idx = lat.index[k]
            known = idx >= 0
            contrib = np.zeros(idx.size)
            contrib[known] = np.einsum("nm,nm->n", lat.psi[k][known], rho[idx[known]])
            eta[k][0] += contrib
    return eta


def initial_state(design: DesignBlocks):
    """Zero effects except intercepts set from simple moments of the responses."""
    coefs = [np.zeros(b.d) for b in design.terms]
    for k in range(1, design.K + 1):
        fam = design.families[k - 1]
        y = design.y[k]
        start = fam.start_eta(y) if y.size else [0.0] * fam.n_params
        for r in range(1, fam.n_params + 1):
            for j, blk in enumerate(design.terms):
                if blk.k != k or blk.r != r:
                    continue
                if blk.kind == "functional-intercept":
                    coefs[j][:] = start[r - 1]  # B-splines sum to one
                    break
                if blk.kind == "constant" and blk.term.spec.intercept:
                    coefs[j][0] = start[r - 1]
                    break
    tau2 = [np.ones(b.n_tau) for b in design.terms]
    scores = [np.zeros((lat.n_levels, lat.M)) for lat in design.latents]
    nu = [np.where(lat.active, np.maximum(np.asarray(lat.basis.nu, float), 1e-12), 0.0) for lat in design.latents]
    return State(coefs, tau2, scores, nu, compute_eta(design, coefs, scores))


# ---------------------------------------------------------------- likelihood
def loglik_rows(design, k, eta_k):
    fam = design.families[k - 1]
    return fam.loglik_eta(design.y[k], list(eta_k))


def log_likelihood(design, state):
    return float(sum(np.sum(loglik_rows(design, k, state.eta[k])) for k in range(1, design.K + 1)))


def _ig_logpdf(x, a, b):
    return a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(x) - b / x


def term_log_prior(design, blk, beta, tau2):
    """Prior of one coefficient block (up to nothing: constants included)."""
    if not blk.penalized:
        sd = design.vague_sd
        return float(-0.5 * beta.size * _LOG2PI - beta.size * np.log(sd) - 0.5 * beta @ beta / sd**2)
    Q = blk.precision(tau2, design.vague_sd)
    return float(0.5 * blk.log_pdet(tau2) - 0.5 * blk.rank * _LOG2PI - 0.5 * beta @ Q @ beta)


def variance_log_prior(design, tau2):
    return float(np.sum(_ig_logpdf(np.asarray(tau2), design.ig_a, design.ig_b)))


def score_log_prior(lat, rho, nu):
    act = lat.active
    if not np.any(act):
        return 0.0
    r = rho[:, act]
    v = nu[act]
    return float(np.sum(-0.5 * _LOG2PI - 0.5 * np.log(v) - 0.5 * r * r / v))


def log_prior(design, state):
    total = 0.0
    for blk, beta, t2 in zip(design.terms, state.coefs, state.tau2):
        total += term_log_prior(design, blk, beta, t2)
        if blk.penalized:
            total += variance_log_prior(design, t2)
    for lat, rho, nu in zip(design.latents, state.scores, state.nu):
        total += score_log_prior(lat, rho, nu)
        total += variance_log_prior(design, nu[lat.active])
    return total


def check_state(state):
    for t2 in state.tau2:
        if np.any(np.asarray(t2) <= 0):
            raise DomainError("variance parameters must be positive")
    for nu in state.nu:
        if np.any(np.asarray(nu) < 0):
            raise DomainError("score variances must be non-negative")


def log_posterior(design: DesignBlocks, state: State):
    """Log-likelihood plus all log-priors (including hyperpriors)."""
    check_state(state)
    return log_likelihood(design, state) + log_prior(design, state)


# --------------------------------------------------------------- derivatives
def derivatives(design, k, eta_k):
    fam = design.families[k - 1]
    return fam.derivatives_unchecked(design.y[k], list(eta_k))


def term_gradient(design, state, j, derivs=None):
    """Gradient and Hessian of the log-posterior in coefficient block ``j``."""
    blk = design.terms[j]
    d = derivs if derivs is not None else derivatives(design, blk.k, state.eta[blk.k])
    s = d.score[blk.r - 1]
    h = d.hess[blk.r - 1]
    Q = blk.precision(state.tau2[j], design.vague_sd)
    beta = state.coefs[j]
    g = blk.X.T @ s - Q @ beta
    H = (blk.X * h[:, None]).T @ blk.X - Q
    return g, H


def latent_gradient(design, state, u, derivs=None, include_prior=True):
    """Per-level gradients (n_levels, M) and Hessians (n_levels, M, M) of the scores."""
    lat = design.latents[u]
    s_all = np.empty(lat.index_all.size)
    h_all = np.empty(lat.index_all.size)
    for k in lat.dims:
        d = derivs[k] if derivs is not None else derivatives(design, k, state.eta[k])
        seg = lat.segments[k]
        s_all[seg] = d.score[0]
        h_all[seg] = d.hess[0]
    M = lat.M
    rho = state.scores[u]
    nu = state.nu[u]
    inv_nu = np.where(lat.active, 1.0 / np.where(lat.active, nu, 1.0), 0.0)
    if not include_prior:
        inv_nu = np.zeros(M)
    g = lat.S @ (lat.psi_all * s_all[:, None]) - rho * inv_nu
    H = (lat.S @ (lat.outer * h_all[:, None])).reshape(-1, M, M)
    H = H - np.diag(inv_nu)[None]
    return g, H


def level_loglik(design, lat, eta):
    """Log-likelihood summed per level of a latent process (location rows only)."""
    ll = np.empty(lat.index_all.size)
    for k in lat.dims:
        ll[lat.segments[k]] = loglik_rows(design, k, eta[k])
    return lat.S @ ll
