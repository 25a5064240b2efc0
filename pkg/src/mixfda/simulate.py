"""Data-generating process for the mixed-type simulation study.

Three dimensions (binary, count, Gaussian) share a latent multivariate
process built from six split-Fourier eigenfunctions with linearly decreasing
eigenvalues.  Every location predictor is ``cos(2 pi t) * (1 - x_i)`` plus the
latent process; the Gaussian standard deviation is ``exp(-2 + 0.5 z_i)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit

from .bases import EigenBasis, split_fourier_eigenbasis
from .funcdata import DENSE_GRID, MultivariateFunctionalDataset, SamplingRegime, subsample_regime

FAMILIES = ("bernoulli", "poisson", "gaussian")
GAMMA0 = -2.0
GAMMA1 = 0.5


@dataclass
class SimulationConfig:
    n: int = 150
    K: int = 3
    M0: int = 6
    regimes: tuple = ("sparse", "regular", "irregular")
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two units")
        if self.K != len(FAMILIES):
            raise ValueError(f"the design has exactly {len(FAMILIES)} dimensions")
        if self.M0 < 1:
            raise ValueError("M0 must be positive")
        self.regimes = tuple(self.regimes)


def true_eigenvalues(M0):
    m = np.arange(1, M0 + 1)
    return (M0 + 1 - m) / M0


def beta0(t):
    return np.cos(2 * np.pi * np.asarray(t))


def beta1(t):
    return -np.cos(2 * np.pi * np.asarray(t))


@dataclass
class SimulationTruth:
    """Ground truth on the dense grid; curve arrays have shape (K, n, G)."""

    grid: np.ndarray
    eigenbasis: EigenBasis
    scores: np.ndarray
    x: np.ndarray
    z: np.ndarray
    eta: np.ndarray
    eta_scale: np.ndarray
    latent: np.ndarray
    beta0: np.ndarray
    beta1: np.ndarray
    gamma0: float = GAMMA0
    gamma1: float = GAMMA1
    units: np.ndarray = field(default=None)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        K, n, G = self.eta.shape
        k, i, g = np.meshgrid(np.arange(1, K + 1), np.arange(n), np.arange(G), indexing="ij")
        pd.DataFrame(
            {
                "dim": k.ravel(),
                "unit": self.units[i.ravel()],
                "t": self.grid[g.ravel()],
                "eta": self.eta.ravel(),
                "latent": self.latent.ravel(),
            }
        ).to_csv(directory / "curves.csv", index=False, float_format="%.17g")
        kk, gg = np.meshgrid(np.arange(1, K + 1), np.arange(G), indexing="ij")
        pd.DataFrame(
            {"dim": kk.ravel(), "t": self.grid[gg.ravel()], "beta0": self.beta0.ravel(), "beta1": self.beta1.ravel()}
        ).to_csv(directory / "effects.csv", index=False, float_format="%.17g")
        frame = pd.DataFrame({"unit": self.units, "x": self.x, "z": self.z})
        for m in range(self.scores.shape[1]):
            frame[f"rho{m + 1}"] = self.scores[:, m]
        frame.to_csv(directory / "units.csv", index=False, float_format="%.17g")
        self.eigenbasis.save(directory / "basis.csv")
        (directory / "truth.json").write_text(
            json.dumps({"gamma0": self.gamma0, "gamma1": self.gamma1, "nu": self.eigenbasis.nu.tolist()}, indent=2)
        )

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        curves = pd.read_csv(directory / "curves.csv", float_precision="round_trip")
        effects = pd.read_csv(directory / "effects.csv", float_precision="round_trip")
        units = pd.read_csv(directory / "units.csv", float_precision="round_trip")
        scalars = json.loads((directory / "truth.json").read_text())
        basis = EigenBasis.load(directory / "basis.csv")
        grid = np.unique(curves["t"].to_numpy())
        K = int(curves["dim"].max())
        n = len(units)
        G = grid.size
        eta = curves["eta"].to_numpy().reshape(K, n, G)
        latent = curves["latent"].to_numpy().reshape(K, n, G)
        rho = units[[c for c in units.columns if c.startswith("rho")]].to_numpy()
        z = units["z"].to_numpy()
        return cls(
            grid, basis, rho, units["x"].to_numpy(), z, eta,
            np.broadcast_to((scalars["gamma0"] + scalars["gamma1"] * z)[:, None], (n, G)).copy(),
            latent, effects["beta0"].to_numpy().reshape(K, G), effects["beta1"].to_numpy().reshape(K, G),
            scalars["gamma0"], scalars["gamma1"], units["unit"].to_numpy(),
        )


def simulate_dataset(config: SimulationConfig | None = None, rng=None):
    """Draw one dense dataset on the 101-point grid together with its truth.

    Random numbers are consumed in a fixed order: eigenbasis reflections,
    scores, ``x``, ``z``, then responses dimension by dimension.
    """
    cfg = config or SimulationConfig()
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    grid = DENSE_GRID
    G = grid.size
    n, K, M0 = cfg.n, cfg.K, cfg.M0
    nu = true_eigenvalues(M0)
    basis = split_fourier_eigenbasis(M0, K, grid, rng)
    basis = EigenBasis(basis.grid, basis.psi, nu, basis.weights, "unit")
    rho = rng.standard_normal((n, M0)) * np.sqrt(nu)[None, :]
    x = rng.uniform(-1.0, 1.0, n)
    z = rng.binomial(1, 0.5, n).astype(float)

    latent = np.einsum("im,mkg->kig", rho, basis.psi)
    b0 = np.tile(beta0(grid), (K, 1))
    b1 = np.tile(beta1(grid), (K, 1))
    eta = b0[:, None, :] + b1[:, None, :] * x[None, :, None] + latent
    eta_scale = np.broadcast_to((GAMMA0 + GAMMA1 * z)[:, None], (n, G)).copy()

    y = np.empty((K, n, G))
    y[0] = rng.binomial(1, expit(eta[0])).astype(float)
    y[1] = rng.poisson(np.exp(eta[1])).astype(float)
    y[2] = rng.normal(eta[2], np.exp(eta_scale))

    units = np.arange(1, n + 1)
    k_idx, i_idx, g_idx = np.meshgrid(np.arange(K), np.arange(n), np.arange(G), indexing="ij")
    dataset = MultivariateFunctionalDataset(
        k_idx.ravel() + 1,
        units[i_idx.ravel()],
        grid[g_idx.ravel()],
        y.ravel(),
        FAMILIES[:K],
        covariates={"x": x[i_idx.ravel()], "z": z[i_idx.ravel()]},
    )
    truth = SimulationTruth(grid, basis, rho, x, z, eta, eta_scale, latent, b0, b1, units=units)
    return dataset, truth


def replicate_seed(seed, replicate):
    """Seed sequence of replicate ``replicate`` so it can be regenerated alone."""
    return np.random.SeedSequence([int(seed), int(replicate)])


def simulate_replicate(config: SimulationConfig, replicate: int):
    """Dense data, truth and one subsampled dataset per configured regime."""
    data_seed, sub_seed = replicate_seed(config.seed, replicate).spawn(2)
    dense, truth = simulate_dataset(config, np.random.default_rng(data_seed))
    regimes = {}
    sub_seeds = sub_seed.spawn(len(config.regimes))
    for name, s in zip(config.regimes, sub_seeds):
        regimes[name] = subsample_regime(dense, SamplingRegime(name), np.random.default_rng(s))
    return dense, truth, regimes


def config_dict(config: SimulationConfig):
    d = asdict(config)
    d["regimes"] = list(d["regimes"])
    return d
