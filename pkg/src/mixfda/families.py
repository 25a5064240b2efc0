"""Pointwise response families with mean-first parameterizations.

Every family maps additive predictors ``eta`` (one column per distributional
parameter) to parameters ``theta`` through monotone links and provides the
log-likelihood together with its first and second derivatives in ``eta``.
Derivatives are diagonal in the parameter index: cross terms are never needed
because each sampler block touches a single predictor.

Parameterizations
-----------------
gaussian     (mean, sd)              identity / log
poisson      (mean,)                 log
bernoulli    (probability,)          logit
negbinomial  (mean, size)            log / log;  Var = mean + mean**2 / size
gamma        (mean, shape)           log / log;  Var = mean**2 / shape
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, expit, gammaln, polygamma

from .exceptions import DomainError

_LOG2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class PredictorDerivatives:
    """Log-likelihood and its derivatives with respect to the predictors.

    ``score[r]`` is d loglik / d eta_r and ``hess[r]`` is d^2 loglik / d eta_r^2
    (the curvature itself, typically negative). ``weights`` gives the
    working weights ``-hess``.
    """

    loglik: np.ndarray
    score: tuple
    hess: tuple

    @property
    def weights(self):
        return tuple(-h for h in self.hess)


class Link:
    name = "identity"

    def inverse(self, eta):
        return np.asarray(eta, dtype=float)

    def __call__(self, theta):
        return np.asarray(theta, dtype=float)


class LogLink(Link):
    name = "log"

    def inverse(self, eta):
        return np.exp(eta)

    def __call__(self, theta):
        return np.log(theta)


class LogitLink(Link):
    name = "logit"

    def inverse(self, eta):
        return expit(eta)

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.log(theta) - np.log1p(-theta)


LINKS = {"identity": Link(), "log": LogLink(), "logit": LogitLink()}


class Family:
    """Base class; subclasses implement ``_logpdf`` and ``_derivs``."""

    name: str = ""
    n_params: int = 1
    links: tuple = ()
    discrete: bool = False

    def inverse_links(self, eta):
        """Map a list/array of predictor columns to parameter columns."""
        return [link.inverse(np.asarray(e, dtype=float)) for link, e in zip(self.links, eta)]

    def support_violations(self, y):
        """Boolean mask of entries of ``y`` outside the support."""
        y = np.asarray(y, dtype=float)
        return ~np.isfinite(y)

    def logpdf(self, y, theta):
        """Log density or mass at ``y`` for parameters ``theta`` (sequence of arrays)."""
        y = np.asarray(y, dtype=float)
        theta = [np.asarray(th, dtype=float) for th in theta]
        if len(theta) != self.n_params:
            raise DomainError(f"{self.name} expects {self.n_params} parameters, got {len(theta)}")
        if np.any(self.support_violations(y)):
            raise DomainError(f"y outside the support of the {self.name} family")
        self._check_theta(theta)
        return self._logpdf(y, theta)

    def _check_theta(self, theta):
        pass

    def predictor_derivatives(self, y, eta):
        """Log-likelihood, score and curvature in the predictors.

        Parameters
        ----------
        y : array_like
            Observations in the support of the family.
        eta : sequence of array_like
            One predictor array per distributional parameter.
        """
        y = np.asarray(y, dtype=float)
        eta = [np.asarray(e, dtype=float) for e in eta]
        if len(eta) != self.n_params:
            raise DomainError(f"{self.name} expects {self.n_params} predictors, got {len(eta)}")
        if np.any(self.support_violations(y)):
            raise DomainError(f"y outside the support of the {self.name} family")
        return self._derivs(y, eta)

    def loglik_eta(self, y, eta):
        """Pointwise log-likelihood as a function of predictors (no validation)."""
        return self._logpdf(y, self.inverse_links(eta))

    def derivatives_unchecked(self, y, eta):
        """Same as :meth:`predictor_derivatives` without input checks (hot loops)."""
        return self._derivs(y, eta)

    def start_eta(self, y):
        """Constant predictor values matching simple moments of ``y``."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class Gaussian(Family):
    name = "gaussian"
    n_params = 2
    links = (LINKS["identity"], LINKS["log"])

    def _check_theta(self, theta):
        if np.any(theta[1] <= 0):
            raise DomainError("gaussian sd must be positive")

    def _logpdf(self, y, theta):
        mu, sd = theta
        return -0.5 * _LOG2PI - np.log(sd) - 0.5 * ((y - mu) / sd) ** 2

    def _derivs(self, y, eta):
        mu = eta[0]
        log_sd = eta[1]
        prec = np.exp(-2.0 * log_sd)
        r = y - mu
        ll = -0.5 * _LOG2PI - log_sd - 0.5 * r * r * prec
        s1 = r * prec
        h1 = -prec * np.ones_like(r)
        s2 = -1.0 + r * r * prec
        h2 = -2.0 * r * r * prec
        return PredictorDerivatives(ll, (s1, s2), (h1, h2))

    def start_eta(self, y):
        sd = np.std(y) if np.size(y) > 1 else 1.0
        return [float(np.mean(y)), float(np.log(max(sd, 1e-3)))]


class Poisson(Family):
    name = "poisson"
    n_params = 1
    links = (LINKS["log"],)
    discrete = True

    def support_violations(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(invalid="ignore"):
            return ~np.isfinite(y) | (y < 0) | (y != np.round(y))

    def _check_theta(self, theta):
        if np.any(theta[0] <= 0):
            raise DomainError("poisson mean must be positive")

    def _logpdf(self, y, theta):
        lam = theta[0]
        return y * np.log(lam) - lam - gammaln(y + 1.0)

    def _derivs(self, y, eta):
        e = eta[0]
        lam = np.exp(e)
        ll = y * e - lam - gammaln(y + 1.0)
        return PredictorDerivatives(ll, (y - lam,), (-lam,))

    def start_eta(self, y):
        return [float(np.log(max(np.mean(y), 1e-2)))]


class Bernoulli(Family):
    name = "bernoulli"
    n_params = 1
    links = (LINKS["logit"],)
    discrete = True

    def support_violations(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(invalid="ignore"):
            return ~np.isfinite(y) | ((y != 0) & (y != 1))

    def _check_theta(self, theta):
        p = theta[0]
        if np.any((p <= 0) | (p >= 1)):
            raise DomainError("bernoulli probability must lie in (0, 1)")

    def _logpdf(self, y, theta):
        p = theta[0]
        return y * np.log(p) + (1.0 - y) * np.log1p(-p)

    def _derivs(self, y, eta):
        e = eta[0]
        p = expit(e)
        # log p = -log(1 + exp(-e)), log(1 - p) = -log(1 + exp(e))
        ll = -y * np.logaddexp(0.0, -e) - (1.0 - y) * np.logaddexp(0.0, e)
        return PredictorDerivatives(ll, (y - p,), (-p * (1.0 - p),))

    def start_eta(self, y):
        p = float(np.clip(np.mean(y), 0.02, 0.98))
        return [float(np.log(p / (1.0 - p)))]


class NegativeBinomial(Family):
    """NB2 with mean ``theta[0]`` and size ``theta[1]``."""

    name = "negbinomial"
    n_params = 2
    links = (LINKS["log"], LINKS["log"])
    discrete = True

    def support_violations(self, y):
        return Poisson.support_violations(self, y)

    def _check_theta(self, theta):
        if np.any(theta[0] <= 0) or np.any(theta[1] <= 0):
            raise DomainError("negbinomial mean and size must be positive")

    def _logpdf(self, y, theta):
        mu, size = theta
        return (
            gammaln(y + size)
            - gammaln(size)
            - gammaln(y + 1.0)
            + size * np.log(size)
            + y * np.log(mu)
            - (y + size) * np.log(mu + size)
        )

    def _derivs(self, y, eta):
        mu = np.exp(eta[0])
        size = np.exp(eta[1])
        ll = self._logpdf(y, (mu, size))
        ms = mu + size
        s1 = y - (y + size) * mu / ms
        h1 = -(y + size) * mu * size / ms**2
        g = digamma(y + size) - digamma(size) + np.log(size) + 1.0 - np.log(ms) - (y + size) / ms
        s2 = size * g
        dg = polygamma(1, y + size) - polygamma(1, size) + 1.0 / size - 2.0 / ms + (y + size) / ms**2
        h2 = s2 + size * size * dg
        return PredictorDerivatives(ll, (s1, s2), (h1, h2))

    def start_eta(self, y):
        m = max(float(np.mean(y)), 1e-2)
        excess = float(np.var(y)) - m
        size = m * m / excess if excess > 1e-8 else 100.0
        return [float(np.log(m)), float(np.log(np.clip(size, 1e-2, 1e3)))]


class Gamma(Family):
    """Gamma with mean ``theta[0]`` and shape ``theta[1]``."""

    name = "gamma"
    n_params = 2
    links = (LINKS["log"], LINKS["log"])

    def support_violations(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(invalid="ignore"):
            return ~np.isfinite(y) | (y <= 0)

    def _check_theta(self, theta):
        if np.any(theta[0] <= 0) or np.any(theta[1] <= 0):
            raise DomainError("gamma mean and shape must be positive")

    def _logpdf(self, y, theta):
        mu, shape = theta
        return shape * np.log(shape / mu) + (shape - 1.0) * np.log(y) - shape * y / mu - gammaln(shape)

    def _derivs(self, y, eta):
        log_mu = eta[0]
        shape = np.exp(eta[1])
        ratio = y * np.exp(-log_mu)
        logy = np.log(y)
        ll = shape * (eta[1] - log_mu) + (shape - 1.0) * logy - shape * ratio - gammaln(shape)
        s1 = shape * (ratio - 1.0)
        h1 = -shape * ratio
        s2 = shape * (eta[1] + 1.0 - log_mu + logy - ratio - digamma(shape))
        h2 = s2 + shape * shape * (1.0 / shape - polygamma(1, shape))
        return PredictorDerivatives(ll, (s1, s2), (h1, h2))

    def start_eta(self, y):
        m = float(np.mean(y))
        v = float(np.var(y))
        shape = m * m / v if v > 0 else 10.0
        return [float(np.log(m)), float(np.log(np.clip(shape, 1e-2, 1e3)))]


FAMILIES = {
    cls.name: cls for cls in (Gaussian, Poisson, Bernoulli, NegativeBinomial, Gamma)
}


def get_family(name):
    """Return a family instance from its lowercase name."""
    if isinstance(name, Family):
        return name
    try:
        return FAMILIES[str(name).lower()]()
    except KeyError:
        raise DomainError(f"unknown family {name!r}; known: {sorted(FAMILIES)}") from None


def logpdf(family, y, theta):
    return get_family(family).logpdf(y, theta)


def predictor_derivatives(family, y, eta):
    return get_family(family).predictor_derivatives(y, eta)
