"""Design assembly: basis matrices, penalties and latent-process blocks."""

from __future__ import annotations

import numpy as np
from scipy import sparse

from ..bases import EigenBasis, bspline_design, difference_penalty, kron_penalties, n_knots_for, row_tensor
from ..exceptions import DesignError, DomainError, PredictionError, SpecError
from ..families import get_family
from .spec import ModelSpec, TermSpec

_EIG_TOL = 1e-9


def _clean_eigvals(P):
    ev = np.linalg.eigvalsh(P)
    ev[ev < _EIG_TOL * max(ev.max(), 1.0)] = 0.0
    return ev


def _sum_to_zero_basis(c):
    """Orthonormal basis (d x d-1) of the complement of vector ``c``."""
    q, _ = np.linalg.qr(c.reshape(-1, 1), mode="complete")
    return q[:, 1:]


class Term:
    """Evaluates one additive term on arbitrary rows of a single dimension.

    Everything data-dependent (covariate range, identifiability constraint,
    factor levels) is fixed from the training rows so that the same term can
    be evaluated on new data.
    """

    def __init__(self, spec: TermSpec, domain, cyclic, t, covs, curve, level=None):
        self.spec = spec
        self.kind = spec.kind
        self.domain = domain
        self.cyclic = cyclic
        self.level = level
        self.covariate = spec.covariates[0] if spec.covariates else None
        self.known_levels = None
        if spec.factor and self.covariate is not None:
            self.known_levels = np.unique(covs[self.covariate])
        if self.kind in ("functional-intercept", "linear-functional", "smooth-interaction"):
            self.n_knots_t = n_knots_for(spec.d_t, spec.degree, cyclic)
            self.P_t = difference_penalty(spec.d_t, spec.order_t, cyclic).values
        if self.kind == "smooth-interaction":
            x = covs[self.covariate]
            self.x_range = (float(x.min()), float(x.max()))
            if not self.x_range[0] < self.x_range[1]:
                raise DesignError(f"covariate {self.covariate!r} is constant; cannot build a smooth in it")
            self.n_knots_x = n_knots_for(spec.d_x, spec.degree)
            _, first = np.unique(curve, return_index=True)
            Bx = self._bx(x[first])
            # sum over curves of f(x_i, t) = 0 for every t
            self.Z = _sum_to_zero_basis(Bx.sum(axis=0))
            Px = difference_penalty(spec.d_x, spec.order_x).values
            self.P_x = self.Z.T @ Px @ self.Z

    def _bx(self, x):
        return bspline_design(self.n_knots_x, self.spec.degree, x, domain=self.x_range).values

    def _bt(self, t):
        return bspline_design(self.n_knots_t, self.spec.degree, t, self.cyclic, self.domain).values

    def _cov(self, covs, name, n):
        if name not in covs:
            raise SpecError(f"unknown covariate {name!r}")
        v = np.asarray(covs[name], dtype=float)
        if v.size != n:
            raise DesignError(f"covariate {name!r} has the wrong length")
        return v

    def design(self, t, covs):
        n = t.size
        kind = self.kind
        if kind == "constant":
            cols = [np.ones(n)] if self.spec.intercept else []
            cols += [self._cov(covs, c, n) for c in self.spec.covariates]
            return np.column_stack(cols)
        if kind == "functional-intercept":
            return self._bt(t)
        if kind == "linear-functional":
            x = self._cov(covs, self.covariate, n)
            if self.level is not None:
                unseen = ~np.isin(x, self.known_levels)
                if np.any(unseen):
                    raise PredictionError(f"unknown level(s) {np.unique(x[unseen]).tolist()} of factor {self.covariate!r}")
                x = (x == self.level).astype(float)
            return x[:, None] * self._bt(t)
        if kind == "smooth-interaction":
            x = self._cov(covs, self.covariate, n)
            lo, hi = self.x_range
            if np.any(x < lo - 1e-9 * (hi - lo)) or np.any(x > hi + 1e-9 * (hi - lo)):
                raise PredictionError(f"covariate {self.covariate!r} outside the training range {self.x_range}")
            return row_tensor(self._bx(x) @ self.Z, self._bt(t))
        raise SpecError(f"term kind {kind!r} has no design matrix")

    def penalties(self):
        if self.kind == "constant":
            return []
        if self.kind == "smooth-interaction":
            return list(kron_penalties(self.P_x, self.P_t))
        return [self.P_t]

    def marginal_eigvals(self):
        if self.kind == "constant":
            return []
        if self.kind == "smooth-interaction":
            return [_clean_eigvals(self.P_x), _clean_eigvals(self.P_t)]
        return [_clean_eigvals(self.P_t)]

    def basis_in_t(self, grid):
        """Marginal B-spline basis in t (for effect curves)."""
        return self._bt(np.asarray(grid, dtype=float))


class TermBlock:
    """Coefficient block of one term: design, penalties and prior metadata."""

    def __init__(self, name, k, r, l, term: Term, X):
        self.name = name
        self.k = k
        self.r = r
        self.l = l
        self.term = term
        self.kind = term.kind
        self.X = X
        self.penalties = term.penalties()
        self.eigvals = term.marginal_eigvals()
        self.n_tau = len(self.penalties)
        if self.n_tau == 2:
            ex, et = self.eigvals
            grid = ex[:, None] + et[None, :]
            self.rank = int(np.sum(grid > 0))
        elif self.n_tau == 1:
            self.rank = int(np.sum(self.eigvals[0] > 0))
        else:
            self.rank = self.d
        self.penalty_quad_ranks = [int(np.sum(e > 0)) for e in self.eigvals]
        if self.n_tau == 2:
            dx, dt = self.eigvals[0].size, self.eigvals[1].size
            self.penalty_quad_ranks = [self.penalty_quad_ranks[0] * dt, self.penalty_quad_ranks[1] * dx]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def penalized(self):
        return self.n_tau > 0

    def precision(self, tau2, vague_sd):
        if not self.penalized:
            return np.eye(self.d) / vague_sd**2
        Q = self.penalties[0] / tau2[0]
        for P, t2 in zip(self.penalties[1:], tau2[1:]):
            Q = Q + P / t2
        return Q

    def log_pdet(self, tau2):
        """Log pseudo-determinant of the prior precision for given variances."""
        if self.n_tau == 1:
            ev = self.eigvals[0]
            pos = ev[ev > 0]
            return float(np.sum(np.log(pos)) - pos.size * np.log(tau2[0]))
        ex, et = self.eigvals
        lam = ex[:, None] / tau2[0] + et[None, :] / tau2[1]
        lam = lam[lam > 0]
        return float(np.sum(np.log(lam)))

    def __repr__(self):
        return f"TermBlock({self.name}, d={self.d}, n_tau={self.n_tau})"


class LatentBlock:
    """Scores of one latent process shared by the location predictors of several dimensions."""

    def __init__(self, level, basis: EigenBasis, level_keys, dims, psi, index):
        self.level = level
        self.name = f"latent.{level}"
        self.basis = basis
        self.level_keys = level_keys
        self.dims = list(dims)
        self.psi = psi
        self.index = index
        nu0 = np.asarray(basis.nu, dtype=float)
        self.active = nu0 > 1e-12 * max(nu0.max(), 1e-300)
        self.M = basis.M
        stacked_psi = [psi[k] for k in self.dims]
        stacked_idx = [index[k] for k in self.dims]
        self.psi_all = np.vstack(stacked_psi) if stacked_psi else np.zeros((0, self.M))
        self.index_all = np.concatenate(stacked_idx) if stacked_idx else np.zeros(0, int)
        offsets = np.cumsum([0] + [index[k].size for k in self.dims])
        self.segments = {k: slice(offsets[j], offsets[j + 1]) for j, k in enumerate(self.dims)}
        n_lat = self.index_all.size
        known = self.index_all >= 0
        self.S = sparse.csr_matrix(
            (np.ones(int(known.sum())), (self.index_all[known], np.flatnonzero(known))),
            shape=(self.n_levels, n_lat),
        )
        self._outer = None

    @property
    def n_levels(self):
        return len(self.level_keys)

    @property
    def outer(self):
        """Row-wise outer products of the basis rows, (N_lat, M*M)."""
        if self._outer is None:
            self._outer = (self.psi_all[:, :, None] * self.psi_all[:, None, :]).reshape(self.psi_all.shape[0], -1)
        return self._outer

    def expanded_matrix(self):
        """Sparse (N_lat, n_levels*M) matrix of the indicator-expanded basis."""
        n_lat = self.index_all.size
        rows = np.repeat(np.arange(n_lat), self.M)
        cols = (self.index_all[:, None] * self.M + np.arange(self.M)[None, :]).ravel()
        return sparse.csr_matrix((self.psi_all.ravel(), (rows, cols)), shape=(n_lat, self.n_levels * self.M))

    def __repr__(self):
        return f"LatentBlock(level={self.level!r}, M={self.M}, n_levels={self.n_levels}, dims={self.dims})"


def _level_keys(dataset, level):
    if level == "unit":
        return dataset.units()
    if dataset.group is None:
        raise DesignError("a group-level latent process needs a group column")
    return dataset.curves()


def _row_levels(dataset, rows, level, keys, unknown="error"):
    if level == "unit":
        vals = dataset.unit[rows]
        pos = np.searchsorted(keys, vals)
        pos = np.clip(pos, 0, len(keys) - 1)
        ok = keys[pos] == vals
    else:
        if dataset.group is None:
            raise DesignError("a group-level latent process needs a group column")
        lookup = {(int(a), int(b)): j for j, (a, b) in enumerate(keys)}
        pos = np.array([lookup.get((int(a), int(b)), -1) for a, b in zip(dataset.unit[rows], dataset.group[rows])], dtype=int)
        ok = pos >= 0
    if not np.all(ok):
        if unknown == "error":
            raise PredictionError(f"{int((~ok).sum())} rows belong to {level} levels not seen in training")
        pos = np.where(ok, pos, -1)
    return pos.astype(int)


class DesignBlocks:
    """All evaluated design pieces of a model for one dataset.

    Rows are handled per dimension in the dataset's canonical order
    (dimension, unit, group, time); ``rows[k]`` maps them back to dataset rows.
    """

    def __init__(self, spec, families, y, t, rows, terms, latents, n_params, vague_sd, ig_a, ig_b, covs):
        self.spec = spec
        self.families = families
        self.y = y
        self.t = t
        self.rows = rows
        self.terms = terms
        self.latents = latents
        self.n_params = n_params
        self.vague_sd = vague_sd
        self.ig_a = ig_a
        self.ig_b = ig_b
        self.covs = covs

    @property
    def K(self):
        return len(self.families)

    @property
    def n_rows(self):
        return sum(r.size for r in self.rows.values())

    def terms_of(self, k, r):
        return [b for b in self.terms if b.k == k and b.r == r]

    def for_newdata(self, dataset, unknown_levels="error"):
        """Evaluate the same terms and latent bases on ``dataset`` rows."""
        return _assemble(self.spec, dataset, self, unknown_levels=unknown_levels)

    def __repr__(self):
        return f"DesignBlocks(K={self.K}, rows={self.n_rows}, terms={len(self.terms)}, latents={len(self.latents)})"


def build_design(dataset, spec: ModelSpec, bases=None, base_dir=None) -> DesignBlocks:
    """Assemble design matrices for ``dataset`` according to ``spec``.

    ``bases`` optionally maps latent level tags to :class:`EigenBasis`
    objects, overriding what the spec references.
    """
    if tuple(get_family(f).name for f in spec.families) != tuple(dataset.family_tags):
        raise SpecError(f"spec families {spec.families} differ from dataset families {dataset.family_tags}")
    missing = [c for c in spec.covariate_names() if c not in dataset.covariates]
    if missing:
        raise SpecError(f"unknown covariate(s) {missing}")
    resolved = {}
    for lat in spec.latent:
        if bases is not None and lat.level in bases:
            b = bases[lat.level]
            resolved[lat.level] = b.head(lat.M) if lat.M is not None else b
        else:
            resolved[lat.level] = lat.resolve(base_dir)
        if resolved[lat.level].K != spec.K:
            raise DesignError(f"eigenbasis for {lat.level!r} has {resolved[lat.level].K} components, model has {spec.K}")
    return _assemble(spec, dataset, None, resolved=resolved)


def _assemble(spec, dataset, template, resolved=None, unknown_levels="error"):
    families = [get_family(f) for f in spec.families]
    n_params = [f.n_params for f in families]
    rows, y, t, covs = {}, {}, {}, {}
    for k in range(1, spec.K + 1):
        rk = dataset.rows_of_dim(k)
        rows[k] = rk
        y[k] = dataset.y[rk]
        t[k] = dataset.t[rk]
        covs[k] = {name: v[rk] for name, v in dataset.covariates.items()}
    curve = dataset.curve_index()

    terms = []
    if template is None:
        for k in range(1, spec.K + 1):
            for r in range(1, n_params[k - 1] + 1):
                for l, ts in enumerate(spec.terms_for(k, r)):
                    if ts.kind == "mfpc-random":
                        continue
                    for term in _make_terms(ts, spec, dataset, t[k], covs[k], curve[rows[k]]):
                        name = f"d{k}.p{r}.{l}.{ts.kind}"
                        if ts.covariates:
                            name += ":" + ",".join(ts.covariates)
                        if term.level is not None:
                            name += f"={term.level:g}"
                        terms.append(TermBlock(name, k, r, l, term, term.design(t[k], covs[k])))
    else:
        for blk in template.terms:
            X = blk.term.design(t[blk.k], covs[blk.k])
            terms.append(TermBlock(blk.name, blk.k, blk.r, blk.l, blk.term, X))

    latents = []
    lat_specs = spec.latent
    for j, lat in enumerate(lat_specs):
        if template is None:
            basis = resolved[lat.level]
            keys = _level_keys(dataset, lat.level)
        else:
            basis = template.latents[j].basis
            keys = template.latents[j].level_keys
        dims = [
            k for k in range(1, spec.K + 1)
            if any(ts.kind == "mfpc-random" and ts.latent == lat.level for ts in spec.terms_for(k, 1))
        ]
        psi, index = {}, {}
        for k in dims:
            try:
                psi[k] = basis.evaluate(k, t[k])
            except DomainError as err:
                raise DesignError(f"eigenbasis does not cover the observation times of dimension {k}") from err
            index[k] = _row_levels(dataset, rows[k], lat.level, keys, unknown_levels)
        latents.append(LatentBlock(lat.level, basis, keys, dims, psi, index))

    design = DesignBlocks(
        spec, families, y, t, rows, terms, latents, n_params,
        spec.priors.vague_sd, spec.priors.ig_a, spec.priors.ig_b, covs,
    )
    design.units = {k: dataset.unit[rows[k]] for k in rows}
    design.groups = {k: None if dataset.group is None else dataset.group[rows[k]] for k in rows}
    return design


def _make_terms(ts, spec, dataset, t, covs, curve):
    if ts.kind == "linear-functional" and ts.factor:
        x = covs[ts.covariates[0]]
        levels = np.unique(x)
        if levels.size < 2:
            raise DesignError(f"factor {ts.covariates[0]!r} has a single level")
        return [Term(ts, spec.domain, spec.cyclic, t, covs, curve, level=float(v)) for v in levels[1:]]
    return [Term(ts, spec.domain, spec.cyclic, t, covs, curve)]
