
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixfda.bases import trapezoid_weights
from mixfda.evaluate import (
    CurveSet,
    pointwise_coverage,
    reconstruct_latent_ls,
    rrmse,
    scalar_metrics,
    write_metrics_csv,
)
from mixfda.exceptions import DegenerateError
from mixfda.simulate import SimulationConfig, simulate_dataset

GRID = np.linspace(0, 1, 101)


def _curves(rng, K=2, n=5):
    return CurveSet(GRID, rng.standard_normal((K, n, 1)) * np.sin(np.pi * GRID) + rng.standard_normal((K, n, 1)))


# ------------------------------------------------------------------- rrmse
def test_rrmse_trivial_identities():
    rng = np.random.default_rng(0)
    f = _curves(rng)
    np.testing.assert_array_equal(rrmse(f, f), 0.0)
    np.testing.assert_allclose(rrmse(f, CurveSet(GRID, np.zeros_like(f.values))), 1.0, rtol=1e-15)
    np.testing.assert_allclose(rrmse(f, CurveSet(GRID, 2 * f.values)), 1.0, rtol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), st.integers(0, 10_000))
def test_rrmse_constant_shift_formula(c, seed):
    f = _curves(np.random.default_rng(seed))
    q = trapezoid_weights(GRID)
    expected = abs(c) * np.sqrt(q.sum()) / np.sqrt(np.einsum("kig,g->ki", f.values**2, q).mean(axis=1))
    np.testing.assert_allclose(rrmse(f, CurveSet(GRID, f.values + c)), expected, rtol=1e-10)


def test_rrmse_zero_truth_is_degenerate():
    with pytest.raises(DegenerateError):
        rrmse(CurveSet(GRID, np.zeros((1, 3, 101))), CurveSet(GRID, np.ones((1, 3, 101))))


def test_rrmse_shape_mismatch():
    with pytest.raises(ValueError):
        rrmse(CurveSet(GRID, np.ones((1, 3, 101))), CurveSet(GRID, np.ones((1, 2, 101))))


# ---------------------------------------------------------------- coverage
def test_coverage_truth_at_median_and_far_away():
    rng = np.random.default_rng(1)
    draws = rng.standard_normal((4, 400, 11))
    med = np.median(draws, axis=1)
    np.testing.assert_array_equal(pointwise_coverage(draws, med), 1.0)
    np.testing.assert_array_equal(pointwise_coverage(draws, med + 100.0), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_coverage_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    fc = pointwise_coverage(rng.standard_normal((3, 120, 7)), rng.standard_normal((3, 7)) * 2)
    assert np.all((fc >= 0) & (fc <= 1))


def test_conjugate_gaussian_coverage_is_nominal():
    # exact posterior draws of a conjugate normal mean model, 200 replicates, 11 locations
    rng = np.random.default_rng(2)
    R, n, G, sigma, tau = 200, 10, 11, 1.0, 2.0
    truth = rng.normal(0, tau, (R, G))
    y = truth[:, None, :] + sigma * rng.standard_normal((R, n, G))
    post_var = 1 / (n / sigma**2 + 1 / tau**2)
    post_mean = post_var * y.sum(axis=1) / sigma**2
    draws = post_mean[:, None, :] + np.sqrt(post_var) * rng.standard_normal((R, 400, G))
    fc = pointwise_coverage(draws, truth)
    assert np.all((fc >= 0.90) & (fc <= 0.99))


# ------------------------------------------------------------------ scalars
def test_scalar_metrics_exact_cases():
    draws = np.full((6, 50), 0.5)
    bias, rmse, _ = scalar_metrics(draws, 0.5)
    assert (bias, rmse) == (0.0, 0.0)
    alt = np.array([[1.5] * 10, [-0.5] * 10] * 3)
    bias, rmse, fc = scalar_metrics(alt, 0.5)
    assert bias == pytest.approx(0.0, abs=1e-15) and rmse == pytest.approx(1.0)
    assert fc == 0.0


def test_scalar_metrics_need_two_replicates():
    with pytest.raises(ValueError):
        scalar_metrics(np.ones((1, 10)), 1.0)


# ----------------------------------------------------------- reconstruction
@pytest.fixture(scope="module")
def sim_truth():
    return simulate_dataset(SimulationConfig(n=80, seed=7))[1]


def test_true_basis_reconstructs_exactly(sim_truth):
    err = reconstruct_latent_ls(CurveSet(sim_truth.grid, sim_truth.latent), sim_truth.eigenbasis)
    assert np.all(err < 1e-8)


def test_reconstruction_nonincreasing_in_M(sim_truth):
    truth = CurveSet(sim_truth.grid, sim_truth.latent)
    errs = np.array([reconstruct_latent_ls(truth, sim_truth.eigenbasis.head(M)) for M in range(1, 7)])
    assert np.all(np.diff(errs, axis=0) <= 1e-12)


def test_truncated_basis_matches_spectral_tail(sim_truth):
    # oracle: the omitted scores' share of the squared norm, computed from the simulated scores
    truth = CurveSet(sim_truth.grid, sim_truth.latent)
    err = reconstruct_latent_ls(truth, sim_truth.eigenbasis.head(3))
    psi = sim_truth.eigenbasis.psi
    q = trapezoid_weights(sim_truth.grid)
    tail = np.einsum("im,mkg->kig", sim_truth.scores[:, 3:], psi[3:])
    expected = np.sqrt(np.einsum("kig,g->k", tail**2, q) / np.einsum("kig,g->k", sim_truth.latent**2, q))
    np.testing.assert_allclose(err, expected, rtol=0.02)


def test_rank_deficient_basis_warns(sim_truth):
    b = sim_truth.eigenbasis
    dup = b.subset(np.array([0, 0, 1]))
    with pytest.warns(RuntimeWarning):
        reconstruct_latent_ls(CurveSet(b.grid, sim_truth.latent), dup)


# ------------------------------------------------------------------ output
def test_metrics_csv_is_deterministic(tmp_path):
    rows = [{"metric": "rrmse_eta", "dim": np.int64(1), "value": np.float64(0.1 + 0.2)}]
    write_metrics_csv(tmp_path / "a.csv", rows, ["metric", "dim", "value"])
    write_metrics_csv(tmp_path / "b.csv", rows, ["metric", "dim", "value"])
    text = (tmp_path / "a.csv").read_text()
    assert text == (tmp_path / "b.csv").read_text()
    assert text.splitlines()[1] == "rrmse_eta,1,0.30000000000000004"
    assert [p.name for p in tmp_path.iterdir()] and not list(tmp_path.glob("*.tmp"))
