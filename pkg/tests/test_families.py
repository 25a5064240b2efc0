import numpy as np
import pytest
from scipy import stats

from mixfda.exceptions import DomainError
from mixfda.families import FAMILIES, get_family


def test_gaussian_at_mode():
    assert get_family("gaussian").logpdf(0.0, (0.0, 1.0)) == pytest.approx(-0.5 * np.log(2 * np.pi))
    assert get_family("gaussian").logpdf(0.0, (0.0, 1.0)) == pytest.approx(-0.9189385, abs=1e-7)


@pytest.mark.parametrize("lam", [0.1, 1.0, 7.5])
def test_poisson_zero(lam):
    assert get_family("poisson").logpdf(0, (lam,)) == pytest.approx(-lam)


def test_negbinomial_matches_nb2_mass():
    # NB2 with size 5, mean 2: p = size / (size + mean)
    size, mean, y = 5.0, 2.0, 3
    expected = stats.nbinom.logpmf(y, size, size / (size + mean))
    assert get_family("negbinomial").logpdf(y, (mean, size)) == pytest.approx(expected, rel=1e-12)


def test_gamma_matches_scipy():
    mean, shape = 3.0, 2.5
    y = np.array([0.2, 1.0, 4.0])
    expected = stats.gamma.logpdf(y, a=shape, scale=mean / shape)
    np.testing.assert_allclose(get_family("gamma").logpdf(y, (mean, shape)), expected, rtol=1e-12)


def test_bernoulli_score_at_zero():
    d = get_family("bernoulli").predictor_derivatives(1.0, [0.0])
    assert d.score[0] == pytest.approx(0.5)


def test_poisson_score_zero_at_mle():
    d = get_family("poisson").predictor_derivatives(2.0, [np.log(2.0)])
    assert d.score[0] == pytest.approx(0.0, abs=1e-14)


def test_gaussian_unit_sd_reduces_to_residual():
    y = np.array([1.3, -0.2])
    eta = np.array([0.3, 0.5])
    d = get_family("gaussian").predictor_derivatives(y, [eta, np.zeros(2)])
    np.testing.assert_allclose(d.score[0], y - eta)
    np.testing.assert_allclose(d.hess[0], -1.0)


def _random_case(name, rng, n):
    eta = [rng.normal(0, 0.7, n) for _ in range(FAMILIES[name].n_params)]
    fam = get_family(name)
    theta = fam.inverse_links(eta)
    if name == "gaussian":
        y = rng.normal(theta[0], theta[1])
    elif name == "poisson":
        y = rng.poisson(theta[0]).astype(float)
    elif name == "bernoulli":
        y = rng.binomial(1, theta[0]).astype(float)
    elif name == "negbinomial":
        y = rng.negative_binomial(theta[1], theta[1] / (theta[1] + theta[0])).astype(float)
    else:
        y = rng.gamma(theta[1], theta[0] / theta[1])
    return fam, y, eta


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_derivatives_match_finite_differences(name):
    rng = np.random.default_rng(11)
    fam, y, eta = _random_case(name, rng, 20)
    d = fam.predictor_derivatives(y, eta)
    np.testing.assert_allclose(d.loglik, fam.logpdf(y, fam.inverse_links(eta)), rtol=1e-12, atol=1e-12)
    h = 1e-5
    for r in range(fam.n_params):
        up = [e.copy() for e in eta]
        dn = [e.copy() for e in eta]
        up[r] += h
        dn[r] -= h
        ll_up = fam.logpdf(y, fam.inverse_links(up))
        ll_dn = fam.logpdf(y, fam.inverse_links(dn))
        fd_score = (ll_up - ll_dn) / (2 * h)
        # coarser step for the second difference to limit cancellation error
        h2 = 1e-3
        up2 = [e + (h2 if q == r else 0.0) for q, e in enumerate(eta)]
        dn2 = [e - (h2 if q == r else 0.0) for q, e in enumerate(eta)]
        fd_hess = (
            fam.logpdf(y, fam.inverse_links(up2)) - 2 * d.loglik + fam.logpdf(y, fam.inverse_links(dn2))
        ) / h2**2
        s_up = fam.predictor_derivatives(y, up).score[r]
        s_dn = fam.predictor_derivatives(y, dn).score[r]
        fd_hess_from_score = (s_up - s_dn) / (2 * h)
        scale = np.maximum(np.abs(d.score[r]), 1e-3)
        assert np.max(np.abs(fd_score - d.score[r]) / scale) < 1e-5
        hscale = np.maximum(np.abs(d.hess[r]), 1e-3)
        assert np.max(np.abs(fd_hess_from_score - d.hess[r]) / hscale) < 1e-5
        assert np.max(np.abs(fd_hess - d.hess[r]) / hscale) < 1e-3


@pytest.mark.parametrize(
    "name, theta",
    [("poisson", (3.7,)), ("negbinomial", (4.0, 1.3)), ("bernoulli", (0.3,))],
)
def test_discrete_mass_sums_to_one(name, theta):
    fam = get_family(name)
    y = np.arange(0, 400, dtype=float) if name != "bernoulli" else np.array([0.0, 1.0])
    logp = fam.logpdf(y, theta)
    p = np.exp(logp)
    keep = np.r_[True, p[1:] >= 1e-12] if name != "bernoulli" else np.ones(2, bool)
    assert abs(1.0 - p[keep].sum()) < 1e-9


def test_support_errors():
    with pytest.raises(DomainError):
        get_family("bernoulli").logpdf(2.0, (0.5,))
    with pytest.raises(DomainError):
        get_family("gamma").logpdf(0.0, (1.0, 1.0))
    with pytest.raises(DomainError):
        get_family("poisson").logpdf(1.0, (-1.0,))
    with pytest.raises(DomainError):
        get_family("weibull")
