import numpy as np
import pytest

from mixfda.bases import trapezoid_weights
from mixfda.simulate import (
    GAMMA0,
    GAMMA1,
    SimulationConfig,
    SimulationTruth,
    beta0,
    beta1,
    replicate_seed,
    simulate_dataset,
    simulate_replicate,
    true_eigenvalues,
)


@pytest.fixture(scope="module")
def sim():
    return simulate_dataset(SimulationConfig(n=60, seed=3))


def test_linearly_decreasing_eigenvalues():
    np.testing.assert_allclose(true_eigenvalues(6), [1, 5 / 6, 4 / 6, 3 / 6, 2 / 6, 1 / 6])


def test_effects_cancel_at_x_one():
    t = np.linspace(0, 1, 101)
    np.testing.assert_allclose(beta0(t) + beta1(t) * 1.0, 0.0, atol=1e-15)


def test_gaussian_scale_for_z_one():
    assert np.exp(GAMMA0 + GAMMA1 * 1.0) == pytest.approx(np.exp(-1.5))
    assert np.exp(-1.5) == pytest.approx(0.223, abs=1e-3)


def test_dense_row_count(sim):
    dense, _ = sim
    assert dense.n_obs == 101 * 3 * 60
    assert dense.family_tags == ("bernoulli", "poisson", "gaussian")


def test_eta_reconstructs_from_parts(sim):
    _, truth = sim
    latent = np.einsum("im,mkg->kig", truth.scores, truth.eigenbasis.psi)
    eta = truth.beta0[:, None, :] + truth.beta1[:, None, :] * truth.x[None, :, None] + latent
    np.testing.assert_array_equal(eta, truth.eta)
    np.testing.assert_allclose(truth.eta_scale, (GAMMA0 + GAMMA1 * truth.z)[:, None] * np.ones(101))


def test_true_basis_orthonormal(sim):
    _, truth = sim
    np.testing.assert_allclose(truth.eigenbasis.gram(), np.eye(6), atol=1e-3)


def test_score_variances_match_eigenvalues():
    _, truth = simulate_dataset(SimulationConfig(n=10_000, seed=4))
    nu = true_eigenvalues(6)
    var = truth.scores.var(axis=0, ddof=1)
    se = nu * np.sqrt(2.0 / (10_000 - 1))
    assert np.all(np.abs(var - nu) < 3 * se)


def test_mean_predictor_tracks_intercept():
    _, truth = simulate_dataset(SimulationConfig(n=4000, seed=5))
    mean = truth.eta.mean(axis=1)
    sd = truth.eta.std(axis=1) / np.sqrt(4000)
    assert np.all(np.abs(mean - truth.beta0) < 4 * sd + 1e-12)


def test_responses_respect_supports(sim):
    dense, _ = sim
    y1 = dense.y[dense.dim == 1]
    y2 = dense.y[dense.dim == 2]
    assert set(np.unique(y1)) <= {0.0, 1.0}
    assert np.all(y2 >= 0) and np.all(y2 == np.round(y2))


def test_replicates_are_reproducible_in_isolation():
    cfg = SimulationConfig(n=20, regimes=("sparse", "regular"), seed=9)
    a = simulate_replicate(cfg, 3)
    b = simulate_replicate(cfg, 3)
    c = simulate_replicate(cfg, 4)
    np.testing.assert_array_equal(a[0].y, b[0].y)
    np.testing.assert_array_equal(a[2]["sparse"].t, b[2]["sparse"].t)
    assert not np.array_equal(a[1].scores, c[1].scores)
    assert set(a[2]) == {"sparse", "regular"}
    assert replicate_seed(9, 3).entropy == replicate_seed(9, 3).entropy


def test_truth_roundtrip(sim, tmp_path):
    _, truth = sim
    truth.save(tmp_path / "truth")
    back = SimulationTruth.load(tmp_path / "truth")
    for name in ("eta", "latent", "scores", "x", "z", "beta0", "beta1", "eta_scale"):
        np.testing.assert_array_equal(getattr(back, name), getattr(truth, name))
    np.testing.assert_array_equal(back.eigenbasis.psi, truth.eigenbasis.psi)


def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(n=1)
    with pytest.raises(ValueError):
        SimulationConfig(K=2)


def test_quadrature_norms_are_finite(sim):
    _, truth = sim
    q = trapezoid_weights(truth.grid)
    assert np.all(np.isfinite(np.einsum("kig,g->ki", truth.latent**2, q)))
