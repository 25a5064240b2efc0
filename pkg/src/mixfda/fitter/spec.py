"""Model specifications: additive terms per predictor and latent processes."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..bases import EigenBasis
from ..exceptions import SpecError
from ..families import get_family

TERM_KINDS = ("constant", "functional-intercept", "linear-functional", "smooth-interaction", "mfpc-random")
LEVELS = ("unit", "group")


@dataclass
class TermSpec:
    """One additive term of a predictor.

    Parameters
    ----------
    kind : str
        ``constant`` (intercept and/or linear scalar covariates, unpenalized),
        ``functional-intercept`` (P-spline in t), ``linear-functional``
        (covariate times P-spline in t), ``smooth-interaction`` (tensor
        P-spline in covariate and t, centred against the intercept) or
        ``mfpc-random`` (latent process represented by an eigenbasis).
    covariates : list of str
        Covariate names used by the term.
    d_x, d_t : int
        Marginal basis sizes.
    order_x, order_t : int
        Difference-penalty orders.
    intercept : bool
        Only for ``constant``: whether a column of ones is included.
    factor : bool
        Only for ``linear-functional``: treat the covariate as categorical,
        giving one functional effect per non-reference level.
    latent : str
        Only for ``mfpc-random``: the level tag of the latent process.
    """

    kind: str
    covariates: list = field(default_factory=list)
    d_x: int = 7
    d_t: int = 14
    order_x: int = 2
    order_t: int = 2
    degree: int = 3
    intercept: bool = True
    factor: bool = False
    latent: str | None = None
    name: str | None = None

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise SpecError(f"unknown term kind {self.kind!r}; expected one of {TERM_KINDS}")
        self.covariates = list(self.covariates)
        if self.kind in ("linear-functional", "smooth-interaction") and len(self.covariates) != 1:
            raise SpecError(f"{self.kind} terms take exactly one covariate")
        if self.kind == "constant" and not self.intercept and not self.covariates:
            raise SpecError("constant term without intercept needs covariates")
        if self.kind == "mfpc-random" and self.latent is None:
            self.latent = "unit"


@dataclass
class PredictorSpec:
    dim: int
    param: int
    terms: list

    def __post_init__(self):
        self.terms = [t if isinstance(t, TermSpec) else TermSpec(**t) for t in self.terms]


@dataclass
class LatentSpec:
    """Declaration of a latent Gaussian process expanded in an eigenbasis.

    ``basis`` is an :class:`EigenBasis` or a path to its CSV file; ``M``
    truncates to the leading functions (all when None).
    """

    level: str = "unit"
    basis: object = None
    M: int | None = None

    def __post_init__(self):
        if self.level not in LEVELS:
            raise SpecError(f"latent level must be one of {LEVELS}, got {self.level!r}")

    def resolve(self, base_dir=None) -> EigenBasis:
        basis = self.basis
        if basis is None:
            raise SpecError(f"latent process {self.level!r} has no eigenbasis")
        if not isinstance(basis, EigenBasis):
            path = Path(basis)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            basis = EigenBasis.load(path)
        if self.M is not None:
            if self.M > basis.M:
                raise SpecError(f"latent {self.level!r}: M={self.M} exceeds the {basis.M} available functions")
            basis = basis.head(self.M)
        return basis


@dataclass
class PriorConfig:
    vague_sd: float = 1000.0
    ig_a: float = 0.001
    ig_b: float = 0.001


@dataclass
class ModelSpec:
    """Per-(dimension, parameter) additive predictors plus latent processes.

    Predictors not listed get a constant intercept.
    """

    families: list
    predictors: list = field(default_factory=list)
    latent: list = field(default_factory=list)
    domain: tuple = (0.0, 1.0)
    cyclic: bool = False
    priors: PriorConfig = field(default_factory=PriorConfig)

    def __post_init__(self):
        self.families = [get_family(f).name for f in self.families]
        self.predictors = [p if isinstance(p, PredictorSpec) else PredictorSpec(**p) for p in self.predictors]
        self.latent = [l if isinstance(l, LatentSpec) else LatentSpec(**l) for l in self.latent]
        if isinstance(self.priors, dict):
            self.priors = PriorConfig(**self.priors)
        self.domain = (float(self.domain[0]), float(self.domain[1]))
        self.validate()

    @property
    def K(self):
        return len(self.families)

    def validate(self):
        seen = set()
        declared = {l.level for l in self.latent}
        if len(declared) != len(self.latent):
            raise SpecError("latent levels must be unique")
        for p in self.predictors:
            if not 1 <= p.dim <= self.K:
                raise SpecError(f"predictor for unknown dimension {p.dim}")
            n_par = get_family(self.families[p.dim - 1]).n_params
            if not 1 <= p.param <= n_par:
                raise SpecError(f"dimension {p.dim} has {n_par} parameter(s); got param {p.param}")
            if (p.dim, p.param) in seen:
                raise SpecError(f"duplicate predictor for (dim={p.dim}, param={p.param})")
            seen.add((p.dim, p.param))
            for t in p.terms:
                if t.kind == "mfpc-random":
                    if p.param != 1:
                        raise SpecError("latent terms are only allowed in the first (location) predictor")
                    if t.latent not in declared:
                        raise SpecError(f"term references undeclared latent process {t.latent!r}")

    def terms_for(self, k, r):
        for p in self.predictors:
            if p.dim == k and p.param == r:
                return p.terms
        return [TermSpec("constant")]

    def covariate_names(self):
        names = []
        for p in self.predictors:
            for t in p.terms:
                names.extend(c for c in t.covariates if c not in names)
        return names

    # --------------------------------------------------------------- JSON I/O
    def to_dict(self):
        def latent_dict(l):
            basis = l.basis
            if isinstance(basis, EigenBasis):
                basis = None
            return {"level": l.level, "basis": None if basis is None else str(basis), "M": l.M}

        return {
            "families": list(self.families),
            "domain": list(self.domain),
            "cyclic": self.cyclic,
            "predictors": [
                {"dim": p.dim, "param": p.param, "terms": [_term_dict(t) for t in p.terms]} for p in self.predictors
            ],
            "latent": [latent_dict(l) for l in self.latent],
            "priors": asdict(self.priors),
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        return cls(**data)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _term_dict(t: TermSpec):
    out = asdict(t)
    return {k: v for k, v in out.items() if v is not None}


def functional_regression_spec(families, covariates=("x",), scale_covariates=(), latent=None, d_t=14, domain=(0.0, 1.0), cyclic=False):
    """Spec with a functional intercept and linear functional effects on every location predictor.

    Additional distributional parameters get a constant predictor with
    ``scale_covariates`` as linear effects.  ``latent`` is a list of
    :class:`LatentSpec`; each process enters every location predictor.
    """
    latent = list(latent or [])
    predictors = []
    for k, fam in enumerate(families, start=1):
        terms = [TermSpec("functional-intercept", d_t=d_t)]
        terms += [TermSpec("linear-functional", covariates=[c], d_t=d_t) for c in covariates]
        terms += [TermSpec("mfpc-random", latent=l.level) for l in latent]
        predictors.append(PredictorSpec(k, 1, terms))
        for r in range(2, get_family(fam).n_params + 1):
            predictors.append(PredictorSpec(k, r, [TermSpec("constant", covariates=list(scale_covariates))]))
    return ModelSpec(list(families), predictors, latent, domain=domain, cyclic=cyclic)
