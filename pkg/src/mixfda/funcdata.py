"""Long-format container for irregular, mixed-type multivariate functional data.

Observations are stored column-wise and kept in a canonical order
(dim, unit, group, t, y) so that downstream results never depend on the order
in which rows were supplied.  A curve is identified by ``unit`` or, when a
nested layer is declared, by the pair ``(unit, group)``; in the nested case
``unit`` is the upper level (e.g. a site) and ``group`` the level nested in it
(e.g. a year observed at that site).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import DomainError, FamilySupportError, SchemaError, ValidationError
from .families import get_family

log = logging.getLogger(__name__)

CSV_COLUMNS = ("dim", "unit", "group", "t", "y")
DENSE_GRID = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class ScalarObservation:
    dim: int
    unit: int
    group: int | None
    t: float
    y: float


@dataclass(frozen=True)
class SamplingRegime:
    """Subsampling scheme applied to a dense 101-point grid on [0, 1].

    ``counts`` is the inclusive range of per-curve observation counts for the
    sparse and irregular kinds; ``grid`` the retained points for ``regular``.
    """

    kind: str
    counts: tuple[int, int] | None = None
    grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("sparse", "regular", "irregular"):
            raise ValueError(f"unknown sampling regime {self.kind!r}")
        if self.counts is None and self.kind != "regular":
            object.__setattr__(self, "counts", (1, 10) if self.kind == "sparse" else (11, 20))
        if self.grid is None and self.kind == "regular":
            object.__setattr__(self, "grid", tuple(np.round(np.linspace(0.0, 1.0, 11), 10)))

    @classmethod
    def sparse(cls):
        return cls("sparse")

    @classmethod
    def regular(cls):
        return cls("regular")

    @classmethod
    def irregular(cls):
        return cls("irregular")


class MultivariateFunctionalDataset:
    """Immutable long-format multivariate functional dataset.

    Parameters
    ----------
    dim, unit, t, y : array_like
        One entry per scalar observation. ``dim`` is 1-based.
    family_tags : sequence of str
        Family name per dimension; its length defines ``K``.
    domain : (float, float)
        Closed observation interval.
    group : array_like, optional
        Nested group id per observation (one grouping layer).
    covariates : mapping, optional
        Row-aligned covariate arrays (unit- or curve-level values repeated on rows).
    cyclic : bool
        Whether the domain wraps around (e.g. hours of a day).
    validate : bool
        Skip support checks when False (prediction frames carry no responses).
    """

    def __init__(
        self,
        dim,
        unit,
        t,
        y,
        family_tags: Sequence[str],
        domain=(0.0, 1.0),
        group=None,
        covariates: Mapping[str, np.ndarray] | None = None,
        cyclic: bool = False,
        validate: bool = True,
    ):
        dim = np.asarray(dim, dtype=np.int64).ravel()
        unit = np.asarray(unit, dtype=np.int64).ravel()
        t = np.asarray(t, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        n = dim.size
        if not (unit.size == t.size == y.size == n):
            raise SchemaError("dim, unit, t and y must have equal length")
        if group is not None:
            group = np.asarray(group, dtype=np.int64).ravel()
            if group.size != n:
                raise SchemaError("group must have one entry per observation")
        covariates = {k: np.asarray(v, dtype=float).ravel() for k, v in (covariates or {}).items()}
        for name, values in covariates.items():
            if values.size != n:
                raise SchemaError(f"covariate {name!r} must have one entry per observation")

        self.family_tags = tuple(get_family(f).name for f in family_tags)
        self.K = len(self.family_tags)
        lo, hi = (float(domain[0]), float(domain[1]))
        if not lo < hi:
            raise SchemaError(f"invalid domain {domain!r}")
        self.domain = (lo, hi)
        self.cyclic = bool(cyclic)

        if n and (dim.min() < 1 or dim.max() > self.K):
            bad = np.flatnonzero((dim < 1) | (dim > self.K))
            raise ValidationError(f"dimension index outside 1..{self.K}", rows=bad)
        outside = (t < lo) | (t > hi) | ~np.isfinite(t)
        if np.any(outside):
            raise DomainError(f"observation times outside domain {self.domain} at rows {np.flatnonzero(outside)[:10].tolist()}")
        if validate:
            self._validate_y(dim, y)

        keys = [y, t] + ([group] if group is not None else []) + [unit, dim]
        order = np.lexsort(keys)
        self.dim = dim[order]
        self.unit = unit[order]
        self.group = group[order] if group is not None else None
        self.t = t[order]
        self.y = y[order]
        self.covariates = {k: v[order] for k, v in covariates.items()}
        for arr in (self.dim, self.unit, self.t, self.y, *self.covariates.values()):
            arr.setflags(write=False)
        if self.group is not None:
            self.group.setflags(write=False)
        self._check_covariates_constant()

    def _validate_y(self, dim, y):
        nonfinite = ~np.isfinite(y)
        if np.any(nonfinite):
            rows = np.flatnonzero(nonfinite)
            raise ValidationError(f"non-finite y at rows {rows.tolist()[:20]}", rows=rows)
        for k, tag in enumerate(self.family_tags, start=1):
            sel = np.flatnonzero(dim == k)
            bad = get_family(tag).support_violations(y[sel])
            if np.any(bad):
                rows = sel[bad]
                raise FamilySupportError(
                    f"dimension {k} ({tag}): y outside family support at rows {rows.tolist()[:20]}",
                    rows=rows,
                )

    def _check_covariates_constant(self):
        if not self.covariates or self.n_obs == 0:
            return
        curve = self.curve_index()
        for name, values in self.covariates.items():
            first = np.full(curve.max() + 1, np.nan)
            first[curve[::-1]] = values[::-1]
            if not np.allclose(first[curve], values, equal_nan=True):
                raise SchemaError(f"covariate {name!r} varies within a curve")

    # ------------------------------------------------------------------ views
    @property
    def n_obs(self):
        return self.dim.size

    @property
    def layers(self):
        """Number of declared grouping layers beyond the per-curve process."""
        return 0 if self.group is None else 1

    def __len__(self):
        return self.n_obs

    def __iter__(self):
        g = self.group if self.group is not None else [None] * self.n_obs
        for row in zip(self.dim, self.unit, g, self.t, self.y):
            yield ScalarObservation(int(row[0]), int(row[1]), None if row[2] is None else int(row[2]), float(row[3]), float(row[4]))

    def __repr__(self):
        return (
            f"MultivariateFunctionalDataset(K={self.K}, n_obs={self.n_obs}, "
            f"n_units={self.units().size}, families={self.family_tags})"
        )

    def units(self):
        return np.unique(self.unit)

    def curves(self):
        """Sorted array of curve keys: units, or (unit, group) rows when nested."""
        if self.group is None:
            return np.unique(self.unit)
        return np.unique(np.column_stack([self.unit, self.group]), axis=0)

    def curve_index(self):
        """Row -> position in :meth:`curves`."""
        if self.group is None:
            return np.searchsorted(np.unique(self.unit), self.unit)
        _, inv = np.unique(np.column_stack([self.unit, self.group]), axis=0, return_inverse=True)
        return inv.ravel()

    def unit_index(self):
        return np.searchsorted(np.unique(self.unit), self.unit)

    def rows_of_dim(self, k):
        return np.flatnonzero(self.dim == k)

    def subset(self, mask, family_tags=None, renumber_dims=False):
        """New dataset restricted to rows where ``mask`` is true."""
        mask = np.asarray(mask)
        dim = self.dim[mask]
        tags = self.family_tags if family_tags is None else family_tags
        if renumber_dims:
            present = np.unique(dim)
            tags = tuple(self.family_tags[k - 1] for k in present)
            dim = np.searchsorted(present, dim) + 1
        return MultivariateFunctionalDataset(
            dim,
            self.unit[mask],
            self.t[mask],
            self.y[mask],
            tags,
            self.domain,
            group=None if self.group is None else self.group[mask],
            covariates={k: v[mask] for k, v in self.covariates.items()},
            cyclic=self.cyclic,
            validate=False,
        )

    def select_dim(self, k):
        """One-dimension view renumbered as dimension 1."""
        return self.subset(self.dim == k, renumber_dims=True)

    def unit_covariates(self):
        """DataFrame with one row per curve and its covariate values."""
        curve = self.curve_index()
        keys = self.curves()
        _, first = np.unique(curve, return_index=True)
        frame = {"unit": keys if keys.ndim == 1 else keys[:, 0]}
        if keys.ndim == 2:
            frame["group"] = keys[:, 1]
        for name, values in self.covariates.items():
            frame[name] = values[first]
        return pd.DataFrame(frame)

    def prediction_frame(self, grid, dims=None):
        """Rows on ``grid`` for every (dim, curve) with covariates copied; y is NaN."""
        grid = np.asarray(grid, dtype=float)
        dims = range(1, self.K + 1) if dims is None else dims
        cov = self.unit_covariates()
        parts = {c: [] for c in ("dim", "unit", "group", "t")}
        covs = {name: [] for name in self.covariates}
        for k in dims:
            for _, row in cov.iterrows():
                parts["dim"].append(np.full(grid.size, k))
                parts["unit"].append(np.full(grid.size, int(row["unit"])))
                if self.group is not None:
                    parts["group"].append(np.full(grid.size, int(row["group"])))
                parts["t"].append(grid)
                for name in covs:
                    covs[name].append(np.full(grid.size, row[name]))
        cat = lambda xs: np.concatenate(xs) if xs else np.empty(0)
        return MultivariateFunctionalDataset(
            cat(parts["dim"]),
            cat(parts["unit"]),
            cat(parts["t"]),
            np.full(sum(p.size for p in parts["t"]), np.nan),
            self.family_tags,
            self.domain,
            group=cat(parts["group"]) if self.group is not None else None,
            covariates={k: cat(v) for k, v in covs.items()},
            cyclic=self.cyclic,
            validate=False,
        )

    def to_frame(self):
        data = {
            "dim": self.dim,
            "unit": self.unit,
            "group": pd.array(self.group, dtype="Int64") if self.group is not None else pd.array([pd.NA] * self.n_obs, dtype="Int64"),
            "t": self.t,
            "y": self.y,
        }
        return pd.DataFrame(data)

    def replace_values(self, dim, old, new):
        """Copy with ``y == old`` on dimension ``dim`` set to ``new``.

        Used e.g. to move rounded zero speeds into the support of a positive
        family before fitting; never applied implicitly.
        """
        y = np.array(self.y)
        y[(self.dim == dim) & (y == old)] = new
        return MultivariateFunctionalDataset(
            self.dim, self.unit, self.t, y, self.family_tags, self.domain,
            group=self.group, covariates=self.covariates, cyclic=self.cyclic,
        )


def load_long_csv(
    path,
    family_tags: Sequence[str],
    schema: Mapping[str, str] | None = None,
    domain=(0.0, 1.0),
    covariates_path=None,
    cyclic: bool = False,
    check_support: bool = True,
) -> MultivariateFunctionalDataset:
    """Read a long-format CSV with columns ``dim,unit,group,t,y``.

    ``schema`` maps canonical column names to the names used in the file.
    Covariates, if any, come from a second CSV keyed by ``unit`` (and
    ``group`` when present); they are merged onto rows. With
    ``check_support=False`` family-support checks are deferred, so values
    can be repaired with :meth:`MultivariateFunctionalDataset.replace_values`
    (which validates again).
    """
    schema = dict(schema or {})
    cols = {c: schema.get(c, c) for c in CSV_COLUMNS}
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"file not found: {path}")
    frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    missing = [c for c in ("dim", "unit", "t", "y") if cols[c] not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {[cols[c] for c in missing]}")
    group = None
    if cols["group"] in frame.columns:
        g = frame[cols["group"]]
        if g.notna().all():
            group = g.to_numpy(dtype=np.int64)
        elif g.notna().any():
            raise SchemaError(f"{path}: group column is only partially filled")
    y = pd.to_numeric(frame[cols["y"]], errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(y))
    if bad.size:
        raise ValidationError(f"{path}: non-finite y in rows {(bad + 2).tolist()[:20]} (1-based incl. header)", rows=bad)
    covariates = {}
    if covariates_path is not None:
        covariates = _merge_covariates(frame, cols, covariates_path, group is not None)
    return MultivariateFunctionalDataset(
        frame[cols["dim"]].to_numpy(dtype=np.int64),
        frame[cols["unit"]].to_numpy(dtype=np.int64),
        frame[cols["t"]].to_numpy(dtype=float),
        y,
        family_tags,
        domain,
        group=group,
        covariates=covariates,
        cyclic=cyclic,
        validate=check_support,
    )


def _merge_covariates(frame, cols, covariates_path, nested):
    cov = pd.read_csv(covariates_path, float_precision="round_trip")
    if "unit" not in cov.columns:
        raise SchemaError(f"{covariates_path}: covariate table needs a 'unit' column")
    keys = ["unit"] + (["group"] if nested and "group" in cov.columns else [])
    left = pd.DataFrame({"unit": frame[cols["unit"]].to_numpy(dtype=np.int64)})
    if "group" in keys:
        left["group"] = frame[cols["group"]].to_numpy(dtype=np.int64)
    merged = left.merge(cov, on=keys, how="left", validate="many_to_one")
    names = [c for c in cov.columns if c not in ("unit", "group")]
    for name in names:
        if merged[name].isna().any():
            raise SchemaError(f"covariate {name!r} missing for some units")
    return {name: merged[name].to_numpy(dtype=float) for name in names}


def write_long_csv(dataset: MultivariateFunctionalDataset, path, covariates_path=None):
    """Write ``dataset`` in the long CSV format (floats in round-trip precision)."""
    frame = dataset.to_frame()
    frame.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
    if covariates_path is not None and dataset.covariates:
        dataset.unit_covariates().to_csv(covariates_path, index=False, float_format="%.17g")


def subsample_regime(dense: MultivariateFunctionalDataset, regime: SamplingRegime, rng) -> MultivariateFunctionalDataset:
    """Subsample a dataset observed on the 101-point grid of [0, 1].

    Curves are visited in canonical (dim, curve) order so results depend only
    on the generator state.
    """
    rng = np.random.default_rng(rng)
    on_grid = np.isclose(dense.t[:, None], DENSE_GRID[None, :], atol=1e-9).any(axis=1)
    if dense.domain != (0.0, 1.0) or not np.all(on_grid):
        raise DomainError("subsample_regime needs a dense dataset on the 101-point grid of [0, 1]")
    curve = dense.curve_index()
    keep = np.zeros(dense.n_obs, dtype=bool)
    if regime.kind == "regular":
        target = np.asarray(regime.grid)
        keep = np.isclose(dense.t[:, None], target[None, :], atol=1e-9).any(axis=1)
        return dense.subset(keep)
    lo, hi = regime.counts
    # rows are sorted by dim then curve then t, so each (dim, curve) is a contiguous run
    key = dense.dim * (curve.max() + 1) + curve
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    ends = np.r_[starts[1:], dense.n_obs]
    for s, e in zip(starts, ends):
        n_pts = int(rng.integers(lo, hi + 1))
        n_pts = min(n_pts, e - s)
        chosen = rng.choice(e - s, size=n_pts, replace=False)
        keep[s + chosen] = True
    return dense.subset(keep)
