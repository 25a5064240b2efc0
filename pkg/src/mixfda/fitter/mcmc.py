"""Blockwise MCMC: Newton-type Metropolis-Hastings, Gibbs and slice updates.

Systematic scan per iteration: every coefficient block in (dimension,
parameter, term) order, each followed by the update of its variance
parameter(s); then every latent process's score block followed by its score
variances.  Coefficient and score blocks use Gaussian proposals centred at
one Newton step from the current value with the negative inverse Hessian as
covariance; the acceptance ratio includes the reverse proposal density.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from ..exceptions import DomainError
from ..families import PredictorDerivatives
from .backfit import BackfitResult, _shift_eta
from .linalg import (
    batched_chol_solve,
    batched_logq,
    batched_ridge_cholesky,
    batched_solve_upper_t,
    chol_solve,
    gaussian_draw,
    gaussian_logq,
    ridge_cholesky,
)
from .posterior import State, derivatives, latent_gradient
from .samples import PosteriorSamples

log = logging.getLogger(__name__)


@dataclass
class SamplerConfig:
    """Sampler budget and tuning.

    The total number of iterations per chain is ``burnin + draws * thin``.
    """

    burnin: int = 1000
    draws: int = 1000
    thin: int = 5
    chains: int = 1
    seed: int = 0
    slice_width: float = 1.0
    slice_doublings: int = 10
    n_jobs: int = 1

    def __post_init__(self):
        if self.draws < 1 or self.thin < 1 or self.burnin < 0 or self.chains < 1:
            raise ValueError("draws, thin and chains must be positive and burnin non-negative")


def _ig_logpdf(x, a, b):
    return -(a + 1.0) * np.log(x) - b / x


def slice_sample_doubling(x0, logf, rng, width=1.0, max_doublings=10, f0=None):
    """One univariate slice-sampling update with the doubling procedure."""
    f0 = logf(x0) if f0 is None else f0
    logy = f0 - rng.exponential()
    left = x0 - width * rng.uniform()
    right = left + width
    f_left, f_right = logf(left), logf(right)
    k = max_doublings
    while k > 0 and (logy < f_left or logy < f_right):
        if rng.uniform() < 0.5:
            left -= right - left
            f_left = logf(left)
        else:
            right += right - left
            f_right = logf(right)
        k -= 1
    lo, hi = left, right
    for _ in range(200):
        x1 = lo + rng.uniform() * (hi - lo)
        f1 = logf(x1)
        if logy < f1 and _doubling_accept(x0, x1, logy, left, right, width, logf):
            return x1, f1
        if x1 < x0:
            lo = x1
        else:
            hi = x1
    return x0, f0


def _doubling_accept(x0, x1, logy, left, right, width, logf):
    differ = False
    while right - left > 1.1 * width:
        mid = 0.5 * (left + right)
        if (x0 < mid) != (x1 < mid):
            differ = True
        if x1 < mid:
            right = mid
        else:
            left = mid
        if differ and logy >= logf(left) and logy >= logf(right):
            return False
    return True


def _merge_derivs(mask, d_new, d_old):
    """Row-wise choice between two derivative sets (``mask`` picks ``d_new``)."""
    pick = lambda a, b: np.where(mask, a, b)
    return PredictorDerivatives(
        pick(d_new.loglik, d_old.loglik),
        tuple(pick(a, b) for a, b in zip(d_new.score, d_old.score)),
        tuple(pick(a, b) for a, b in zip(d_new.hess, d_old.hess)),
    )


class ChainSampler:
    """State and update steps of a single chain."""

    def __init__(self, design, state: State, rng, config: SamplerConfig):
        self.design = design
        self.state = state.copy()
        self.rng = rng
        self.cfg = config
        self._cache = {}
        self.accepted = {}
        self.attempts = {}
        self.ridged = {}

    def _derivs(self, k):
        d = self._cache.get(k)
        if d is None:
            d = derivatives(self.design, k, self.state.eta[k])
            self._cache[k] = d
        return d

    def _count(self, name, accepted, n=1):
        self.accepted[name] = self.accepted.get(name, 0) + accepted
        self.attempts[name] = self.attempts.get(name, 0) + n

    # -------------------------------------------------------- coefficients
    def step_term(self, j):
        design, st = self.design, self.state
        blk = design.terms[j]
        k, r = blk.k, blk.r
        X = blk.X
        Q = blk.precision(st.tau2[j], design.vague_sd)
        beta = st.coefs[j]
        d0 = self._derivs(k)

        g0 = X.T @ d0.score[r - 1] - Q @ beta
        A0 = -((X * d0.hess[r - 1][:, None]).T @ X) + Q
        L0, lam0 = ridge_cholesky(A0)
        if lam0:
            self.ridged[blk.name] = self.ridged.get(blk.name, 0) + 1
        mean0 = beta + chol_solve(L0, g0)
        prop = gaussian_draw(mean0, L0, self.rng.standard_normal(beta.size))

        eta1 = st.eta[k].copy()
        eta1[r - 1] += X @ (prop - beta)
        d1 = derivatives(design, k, eta1)
        ll0 = float(np.sum(d0.loglik))
        ll1 = float(np.sum(d1.loglik))
        if not np.isfinite(ll1):
            self._count(blk.name, 0)
            return
        g1 = X.T @ d1.score[r - 1] - Q @ prop
        A1 = -((X * d1.hess[r - 1][:, None]).T @ X) + Q
        L1, _ = ridge_cholesky(A1)
        mean1 = prop + chol_solve(L1, g1)
        log_alpha = (
            ll1 - 0.5 * prop @ Q @ prop
            - ll0 + 0.5 * beta @ Q @ beta
            + gaussian_logq(beta, mean1, L1)
            - gaussian_logq(prop, mean0, L0)
        )
        if np.log(self.rng.uniform()) < log_alpha:
            st.coefs[j] = prop
            st.eta[k] = eta1
            self._cache[k] = d1
            self._count(blk.name, 1)
        else:
            self._count(blk.name, 0)

    def step_tau(self, j):
        design, st = self.design, self.state
        blk = design.terms[j]
        if not blk.penalized:
            return
        a, b = design.ig_a, design.ig_b
        beta = st.coefs[j]
        if blk.n_tau == 1:
            quad = float(beta @ blk.penalties[0] @ beta)
            shape = a + 0.5 * blk.rank
            st.tau2[j] = np.array([(b + 0.5 * quad) / self.rng.gamma(shape)])
            return
        quads = [float(beta @ P @ beta) for P in blk.penalties]
        tau2 = st.tau2[j].copy()
        for c in range(blk.n_tau):

            def logf(v, c=c):
                if not np.isfinite(v) or abs(v) > 700:
                    return -np.inf
                t2 = tau2.copy()
                t2[c] = np.exp(v)
                return (
                    0.5 * blk.log_pdet(t2)
                    - 0.5 * sum(q / t for q, t in zip(quads, t2))
                    + _ig_logpdf(t2[c], a, b)
                    + v
                )

            v, _ = slice_sample_doubling(
                np.log(tau2[c]), logf, self.rng, self.cfg.slice_width, self.cfg.slice_doublings
            )
            tau2[c] = np.exp(v)
        st.tau2[j] = tau2

    # --------------------------------------------------------------- scores
    def step_latent(self, u):
        design, st = self.design, self.state
        lat = design.latents[u]
        act = np.flatnonzero(lat.active)
        if act.size == 0 or lat.n_levels == 0:
            return
        d0 = {k: self._derivs(k) for k in lat.dims}
        g0, H0 = latent_gradient(design, st, u, d0)
        g0 = g0[:, act]
        A0 = -H0[:, act][:, :, act]
        L0, lam0 = batched_ridge_cholesky(A0)
        if np.any(lam0 > 0):
            self.ridged[lat.name] = self.ridged.get(lat.name, 0) + int(np.sum(lam0 > 0))
        rho = st.scores[u]
        ra = rho[:, act]
        mean0 = ra + batched_chol_solve(L0, g0)
        prop_a = mean0 + batched_solve_upper_t(L0, self.rng.standard_normal(ra.shape))
        step = np.zeros_like(rho)
        step[:, act] = prop_a - ra
        eta1 = _shift_eta(design, lat, st.eta, step)
        d1 = {k: derivatives(design, k, eta1[k]) for k in lat.dims}

        ll0 = np.empty(lat.index_all.size)
        ll1 = np.empty(lat.index_all.size)
        for k in lat.dims:
            seg = lat.segments[k]
            ll0[seg] = d0[k].loglik
            ll1[seg] = d1[k].loglik
        ll0 = lat.S @ ll0
        ll1 = lat.S @ ll1
        nu_a = st.nu[u][act]
        lp0 = -0.5 * np.sum(ra * ra / nu_a, axis=1)
        lp1 = -0.5 * np.sum(prop_a * prop_a / nu_a, axis=1)

        prop_full = rho.copy()
        prop_full[:, act] = prop_a
        probe = State(st.coefs, st.tau2, [prop_full if v == u else s for v, s in enumerate(st.scores)], st.nu, eta1)
        g1, H1 = latent_gradient(design, probe, u, d1)
        L1, _ = batched_ridge_cholesky(-H1[:, act][:, :, act])
        mean1 = prop_a + batched_chol_solve(L1, g1[:, act])
        with np.errstate(invalid="ignore", over="ignore"):
            log_alpha = ll1 - ll0 + lp1 - lp0 + batched_logq(ra, mean1, L1) - batched_logq(prop_a, mean0, L0)
        log_alpha = np.where(np.isfinite(log_alpha), log_alpha, -np.inf)
        accept = np.log(self.rng.uniform(size=lat.n_levels)) < log_alpha
        self._count(lat.name, int(accept.sum()), lat.n_levels)
        if not np.any(accept):
            return
        st.scores[u] = np.where(accept[:, None], prop_full, rho)
        delta = step * accept[:, None]
        new_eta = _shift_eta(design, lat, st.eta, delta)
        for k in lat.dims:
            idx = lat.index[k]
            rows_ok = np.zeros(idx.size, dtype=bool)
            known = idx >= 0
            rows_ok[known] = accept[idx[known]]
            st.eta[k] = new_eta[k]
            self._cache[k] = _merge_derivs(rows_ok, d1[k], d0[k])

    def step_nu(self, u):
        design, st = self.design, self.state
        lat = design.latents[u]
        act = lat.active
        if not np.any(act):
            return
        rho = st.scores[u][:, act]
        shape = design.ig_a + 0.5 * lat.n_levels
        rate = design.ig_b + 0.5 * np.sum(rho * rho, axis=0)
        nu = st.nu[u].copy()
        nu[act] = rate / self.rng.gamma(shape, size=rate.size)
        st.nu[u] = nu

    def sweep(self):
        for j in range(len(self.design.terms)):
            self.step_term(j)
            self.step_tau(j)
        for u in range(len(self.design.latents)):
            self.step_latent(u)
            self.step_nu(u)


def block_names(design):
    names = []
    for blk in design.terms:
        names.append(blk.name + "/coef")
        if blk.penalized:
            names.append(blk.name + "/tau2")
    for lat in design.latents:
        names += [lat.name + "/scores", lat.name + "/nu"]
    return names


def _snapshot(design, st):
    out = []
    for j, blk in enumerate(design.terms):
        out.append(st.coefs[j].copy())
        if blk.penalized:
            out.append(st.tau2[j].copy())
    for u in range(len(design.latents)):
        out += [st.scores[u].copy(), st.nu[u].copy()]
    return out


def _run_chain(design, state, seed_seq, cfg):
    rng = np.random.default_rng(seed_seq)
    sampler = ChainSampler(design, state, rng, cfg)
    names = block_names(design)
    stores = [[] for _ in names]
    total = cfg.burnin + cfg.draws * cfg.thin
    for it in range(1, total + 1):
        sampler.sweep()
        if it > cfg.burnin and (it - cfg.burnin) % cfg.thin == 0:
            for store, value in zip(stores, _snapshot(design, sampler.state)):
                store.append(value)
    draws = {n: np.stack(s) for n, s in zip(names, stores)}
    acc = {n: sampler.accepted[n] / max(sampler.attempts[n], 1) for n in sampler.attempts}
    return draws, acc, dict(sampler.ridged)


def mcmc_sample(design, init, config: SamplerConfig | None = None) -> PosteriorSamples:
    """Draw from the posterior starting every chain at ``init``.

    Chains use independent streams spawned from ``config.seed``, so results
    depend only on (seed, chains) and not on how chains are scheduled.
    """
    cfg = config or SamplerConfig()
    state = init.state if isinstance(init, BackfitResult) else init
    for arr in list(state.coefs) + list(state.scores):
        if not np.all(np.isfinite(arr)):
            raise DomainError("initial values must be finite")
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    if cfg.n_jobs > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.n_jobs, cfg.chains)) as pool:
            results = list(pool.map(_run_chain, [design] * cfg.chains, [state] * cfg.chains, seeds, [cfg] * cfg.chains))
    else:
        results = [_run_chain(design, state, s, cfg) for s in seeds]
    names = block_names(design)
    blocks = {n: np.stack([res[0][n] for res in results]) for n in names}
    acc_names = sorted({n for res in results for n in res[1]})
    acceptance = {n: np.array([res[1].get(n, np.nan) for res in results]) for n in acc_names}
    meta = {
        "sampler": asdict(cfg),
        "ridge_regularized": [res[2] for res in results],
        "terms": [
            {"name": b.name, "dim": b.k, "param": b.r, "kind": b.kind, "d": b.d, "n_tau": b.n_tau} for b in design.terms
        ],
        "latents": [{"name": l.name, "level": l.level, "M": l.M, "n_levels": l.n_levels} for l in design.latents],
    }
    return PosteriorSamples(blocks, acceptance, meta)
