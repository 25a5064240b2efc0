import warnings

import numpy as np
import pytest

from mixfda.bases import trapezoid_weights
from mixfda.exceptions import DegenerateError, DomainError
from mixfda.funcdata import MultivariateFunctionalDataset, SamplingRegime, subsample_regime
from mixfda.gfpca import (
    BinSpec,
    GFPCAConfig,
    LatentMatrix,
    RefitConfig,
    UnivariateFPCA,
    bin_data,
    binned_latent_matrix,
    fast_covariance_fpca,
    fit_local_mixed_model,
    multilevel_split,
    refit_scores,
    univariate_gfpca,
)
from mixfda.simulate import SimulationConfig, simulate_dataset

GRID = np.linspace(0, 1, 101)


# ------------------------------------------------------------------ binning
def test_bin_membership_near_boundary():
    bins = BinSpec.equidistant(11, 0.3)
    members = np.flatnonzero(bins.membership(np.array([0.05]))[0])
    np.testing.assert_allclose(bins.centers[members], [0.0, 0.1, 0.2, 0.3])


def test_zero_halfwidth_partitions_observed_times():
    t = np.repeat(np.linspace(0, 1, 6), 3)
    bins = BinSpec(np.unique(t), 0.0)
    parts = bin_data(t, bins)
    assert sorted(np.concatenate(parts).tolist()) == list(range(t.size))
    assert all(p.size == 3 for p in parts)


def test_cyclic_bin_wraps_midnight():
    bins = BinSpec([1.0, 12.0], 2.0, (0.0, 24.0), cyclic=True)
    assert bins.membership(np.array([23.5]))[0, 0]
    plain = BinSpec([1.0, 12.0], 2.0, (0.0, 24.0), cyclic=False)
    assert not plain.membership(np.array([23.5]))[0, 0]


def test_uncovered_observation_raises():
    with pytest.raises(DomainError):
        bin_data(np.array([0.5]), BinSpec([0.0, 1.0], 0.1))


def test_empty_bin_warns():
    with pytest.warns(RuntimeWarning):
        parts = bin_data(np.array([0.0, 0.05]), BinSpec([0.0, 0.5], 0.1))
    assert parts[1].size == 0


# ------------------------------------------------------- local mixed models
def test_gaussian_random_intercepts_are_shrunk_means():
    rng = np.random.default_rng(0)
    n_units, n_per = 40, 6
    unit = np.repeat(np.arange(n_units), n_per)
    y = 1.0 + rng.normal(0, 0.8, n_units)[unit] + rng.normal(0, 0.5, unit.size)
    fit = fit_local_mixed_model(y, "gaussian", {}, [(unit, n_units)])
    s2b = fit.variances[0]
    s2e = np.exp(2 * fit.fixed[2][0])
    ybar = np.bincount(unit, y) / n_per
    blup = s2b / (s2b + s2e / n_per) * (ybar - y.mean())
    np.testing.assert_allclose(fit.random[0], blup, atol=1e-5)
    assert fit.fixed[1][0] == pytest.approx(y.mean(), abs=1e-5)


def test_poisson_all_zero_unit_is_shrunk_downward():
    rng = np.random.default_rng(1)
    unit = np.repeat(np.arange(20), 5)
    y = rng.poisson(np.exp(1.0 + rng.normal(0, 0.5, 20))[unit]).astype(float)
    y[unit == 0] = 0.0
    fit = fit_local_mixed_model(y, "poisson", {}, [(unit, 20)])
    b0 = fit.random[0][0]
    assert b0 < 0
    # shrinkage: the unit's own log mean would be -inf
    assert np.isfinite(b0)


def test_local_model_needs_two_levels():
    with pytest.raises(DegenerateError):
        fit_local_mixed_model(np.ones(5), "gaussian", {}, [(np.zeros(5, int), 1)])


def test_bernoulli_bin_variance_underestimates_truth():
    dense, truth = simulate_dataset(SimulationConfig(n=150, seed=5))
    d1 = dense.select_dim(1)
    rows = np.flatnonzero(BinSpec([0.5], 0.3).membership(d1.t)[:, 0])
    units = d1.unit[rows]
    _, idx = np.unique(units, return_inverse=True)
    fit = fit_local_mixed_model(d1.y[rows], "bernoulli", {1: np.column_stack([np.ones(rows.size), d1.covariates["x"][rows]])},
                                [(idx.ravel(), 150)])
    inside = np.abs(truth.grid - 0.5) <= 0.3
    true_var = truth.latent[0][:, inside].var(axis=0).mean()
    assert fit.variances[0] < true_var


# ----------------------------------------------------------- covariance FPCA
def test_rank_one_latent_recovers_function_and_variance():
    rng = np.random.default_rng(2)
    centers = np.linspace(0, 1, 11)
    phi = lambda t: np.sqrt(2) * np.sin(np.pi * t)
    xi = rng.standard_normal(500)
    latent = LatentMatrix(xi[:, None] * phi(centers)[None, :], np.arange(500), centers)
    f = fast_covariance_fpca(latent, pve=0.9)
    assert abs(np.corrcoef(f.phi[0], phi(f.grid))[0, 1]) > 0.99
    assert abs(f.upsilon[0] - 1.0) < 0.15


def test_eigenfunctions_orthonormal_and_eigenvalues_sorted():
    rng = np.random.default_rng(3)
    centers = np.linspace(0, 1, 11)
    rows = rng.standard_normal((200, 3)) @ np.vstack([np.ones(11), np.cos(np.pi * centers), np.sin(2 * np.pi * centers)])
    f = fast_covariance_fpca(LatentMatrix(rows, np.arange(200), centers), pve=0.999)
    q = trapezoid_weights(f.grid)
    gram = (f.phi * q) @ f.phi.T
    np.testing.assert_allclose(gram, np.eye(f.M), atol=1e-3)
    assert np.all(np.diff(f.upsilon) <= 0)
    assert f.scores.shape == (200, f.M)


def test_constant_latent_matrix_is_degenerate():
    centers = np.linspace(0, 1, 5)
    with pytest.raises(DegenerateError):
        fast_covariance_fpca(LatentMatrix(np.ones((10, 5)), np.arange(10), centers))


def test_fpca_save_load_roundtrip(tmp_path):
    f = UnivariateFPCA(GRID, np.vstack([np.ones(101), np.sqrt(3) * (2 * GRID - 1)]), np.array([1.0, 0.5]), 0.99,
                       scores=np.array([[0.1, 0.2], [0.3, -0.4]]), keys=np.array([4, 9]), meta={"a": 1})
    f.save(tmp_path / "f.csv")
    g = UnivariateFPCA.load(tmp_path / "f.csv")
    np.testing.assert_array_equal(g.phi, f.phi)
    np.testing.assert_array_equal(g.scores, f.scores)
    np.testing.assert_array_equal(g.keys, f.keys)
    assert g.meta == {"a": 1}


# ---------------------------------------------------------------- multilevel
def _two_level(rng, n_units, n_groups, K1, K0):
    S = K1.shape[0]
    unit = rng.multivariate_normal(np.zeros(S), K1, n_units)
    group = rng.multivariate_normal(np.zeros(S), K0, (n_units, n_groups))
    values = (unit[:, None, :] + group).reshape(-1, S)
    keys = np.column_stack([np.repeat(np.arange(n_units), n_groups), np.tile(np.arange(n_groups), n_units)])
    return LatentMatrix(values, keys, np.linspace(0, 1, S), "group")


def test_multilevel_split_recovers_covariances():
    rng = np.random.default_rng(4)
    s = np.linspace(0, 1, 7)
    K1 = np.outer(np.ones(7), np.ones(7)) + 0.5 * np.outer(np.cos(np.pi * s), np.cos(np.pi * s))
    K0 = 0.6 * np.exp(-np.abs(s[:, None] - s[None, :]) / 0.3)
    between, within = multilevel_split(_two_level(rng, 100, 9, K1, K0))
    assert np.linalg.norm(between.covariance() - K1) / np.linalg.norm(K1) < 0.2
    assert np.linalg.norm(within.covariance() - K0) / np.linalg.norm(K0) < 0.2


def test_multilevel_identical_groups_have_no_within_variation():
    rng = np.random.default_rng(5)
    unit = rng.standard_normal((30, 5))
    values = np.repeat(unit, 3, axis=0)
    keys = np.column_stack([np.repeat(np.arange(30), 3), np.tile(np.arange(3), 30)])
    _, within = multilevel_split(LatentMatrix(values, keys, np.linspace(0, 1, 5), "group"))
    np.testing.assert_allclose(within.covariance(), 0.0, atol=1e-12)


def test_multilevel_zero_unit_effects_give_small_between():
    rng = np.random.default_rng(6)
    K0 = np.eye(5)
    between, within = multilevel_split(_two_level(rng, 200, 4, np.zeros((5, 5)), K0))
    assert np.abs(between.covariance()).max() < 0.15


def test_single_group_units_only_count_between():
    values = np.arange(12.0).reshape(4, 3)
    keys = np.array([[0, 0], [1, 0], [1, 1], [2, 0]])
    between, within = multilevel_split(LatentMatrix(values, keys, np.linspace(0, 1, 3), "group"))
    np.testing.assert_allclose(within.values[0], 0.0)
    np.testing.assert_allclose(within.values[3], 0.0)
    assert between.values.shape == (3, 3)


# --------------------------------------------------------------------- refit
def _gaussian_expansion(rng, n=150):
    phi = np.vstack([np.sqrt(2) * np.sin(2 * np.pi * GRID), np.sqrt(2) * np.cos(2 * np.pi * GRID)])
    xi = rng.standard_normal((n, 2)) * np.sqrt([1.0, 0.5])
    y = xi @ phi + 0.3 * rng.standard_normal((n, GRID.size))
    unit = np.repeat(np.arange(1, n + 1), GRID.size)
    ds = MultivariateFunctionalDataset(np.ones(unit.size), unit, np.tile(GRID, n), y.ravel(), ["gaussian"])
    return ds, phi, xi


def test_refit_scores_track_true_scores():
    rng = np.random.default_rng(7)
    ds, phi, xi = _gaussian_expansion(rng)
    fpca = UnivariateFPCA(GRID, phi, np.array([1.0, 0.5]), 0.99)
    out = refit_scores(ds, {"unit": fpca}, config=RefitConfig(method="mcmc", burnin=100, draws=100, seed=1))
    s = out["unit"].scores
    for m in range(2):
        assert np.corrcoef(s[:, m], xi[:, m])[0, 1] > 0.9


def test_zero_eigenvalue_component_gets_zero_scores():
    rng = np.random.default_rng(8)
    ds, phi, xi = _gaussian_expansion(rng, n=40)
    fpca = UnivariateFPCA(GRID, phi, np.array([1.0, 0.0]), 0.99)
    for method in ("mode", "mcmc"):
        out = refit_scores(ds, {"unit": fpca}, config=RefitConfig(method=method, burnin=20, draws=20))
        assert np.all(out["unit"].scores[:, 1] == 0.0)
        assert np.any(out["unit"].scores[:, 0] != 0.0)


@pytest.fixture(scope="module")
def sparse_binary():
    dense, truth = simulate_dataset(SimulationConfig(n=150, seed=21))
    ds = subsample_regime(dense, SamplingRegime("sparse"), np.random.default_rng(2))
    return ds.select_dim(1), truth


def test_refit_increases_score_variance_on_sparse_binary(sparse_binary):
    d1, _ = sparse_binary
    base = GFPCAConfig(location_covariates=("x",), refit=RefitConfig(method="none"))
    binned = univariate_gfpca(d1, base)["unit"]
    refit = refit_scores(d1, {"unit": binned}, ("x",), (), RefitConfig(burnin=300, draws=300))["unit"]
    assert refit.scores[:, 0].var() > binned.scores[:, 0].var()


def test_univariate_count_in_plausible_range():
    dense, _ = simulate_dataset(SimulationConfig(n=150, seed=22))
    ds = subsample_regime(dense, SamplingRegime("irregular"), np.random.default_rng(1))
    cfg = GFPCAConfig(location_covariates=("x",), scale_covariates=("z",), refit=RefitConfig(method="none"))
    for k in (1, 2, 3):
        f = univariate_gfpca(ds.select_dim(k), cfg)["unit"]
        assert 2 <= f.M <= 6
        assert f.grid.size == 101


def test_binned_latent_matrix_shape_and_missing_units_zero(sparse_binary):
    d1, _ = sparse_binary
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        latent, info = binned_latent_matrix(d1, BinSpec.equidistant(11, 0.3), ("x",))
    assert latent.values.shape == (150, 11)
    assert info["failed_bins"] == []
    for s, c in enumerate(latent.centers):
        has = np.zeros(150, bool)
        rows = np.abs(d1.t - c) <= 0.3 + 1e-12
        has[np.searchsorted(np.unique(d1.unit), d1.unit[rows])] = True
        assert np.all(latent.values[~has, s] == 0.0)
