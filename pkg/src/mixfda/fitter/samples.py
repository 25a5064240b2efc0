"""Container and persistence for MCMC draws."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd


class PosteriorSamples:
    """Draws per parameter block with shape ``(chains, draws, ...)``.

    Block names are ``<term>/coef``, ``<term>/tau2``, ``latent.<level>/scores``
    and ``latent.<level>/nu``.
    """

    def __init__(self, blocks: dict, acceptance: dict | None = None, meta: dict | None = None):
        self.blocks = {k: np.asarray(v, dtype=float) for k, v in blocks.items()}
        n_draws = {v.shape[:2] for v in self.blocks.values()}
        if len(n_draws) > 1:
            raise ValueError(f"blocks disagree on (chains, draws): {sorted(n_draws)}")
        self.acceptance = {k: np.asarray(v, dtype=float) for k, v in (acceptance or {}).items()}
        self.meta = dict(meta or {})

    @property
    def n_chains(self):
        return next(iter(self.blocks.values())).shape[0] if self.blocks else 0

    @property
    def n_draws(self):
        return next(iter(self.blocks.values())).shape[1] if self.blocks else 0

    def names(self):
        return list(self.blocks)

    def draws(self, name, combine_chains=True):
        arr = self.blocks[name]
        if combine_chains:
            return arr.reshape((-1,) + arr.shape[2:])
        return arr

    def mean(self, name):
        return self.draws(name).mean(axis=0)

    def quantile(self, name, q):
        return np.quantile(self.draws(name), q, axis=0)

    def rhat(self, name):
        """Split-chain potential scale reduction per scalar in the block."""
        x = self.blocks[name]
        c, n = x.shape[:2]
        half = n // 2
        if half < 2:
            raise ValueError("too few draws for a split R-hat")
        x = x[:, : 2 * half].reshape((c * 2, half) + x.shape[2:])
        chain_means = x.mean(axis=1)
        within = x.var(axis=1, ddof=1).mean(axis=0)
        between = half * chain_means.var(axis=0, ddof=1)
        var_hat = (half - 1) / half * within + between / half
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.sqrt(var_hat / within)
        return np.where(within > 0, r, 1.0)

    def concat_chains(self, other):
        blocks = {k: np.concatenate([self.blocks[k], other.blocks[k]], axis=0) for k in self.blocks}
        acc = {k: np.concatenate([self.acceptance[k], other.acceptance[k]]) for k in self.acceptance}
        return PosteriorSamples(blocks, acc, self.meta)

    # ------------------------------------------------------------ persistence
    def save(self, directory):
        """One CSV per block (columns chain, draw, v0, v1, ...) plus ``meta.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = {}
        for j, (name, arr) in enumerate(self.blocks.items()):
            c, n = arr.shape[:2]
            flat = arr.reshape(c * n, -1)
            frame = pd.DataFrame(flat, columns=[f"v{i}" for i in range(flat.shape[1])])
            frame.insert(0, "draw", np.tile(np.arange(n), c))
            frame.insert(0, "chain", np.repeat(np.arange(c), n))
            fname = f"block{j:03d}.csv"
            frame.to_csv(directory / fname, index=False, float_format="%.17g")
            files[name] = {"file": fname, "shape": list(arr.shape[2:])}
        meta = {
            "blocks": files,
            "acceptance": {k: v.tolist() for k, v in self.acceptance.items()},
            "meta": self.meta,
        }
        (directory / "meta.json").write_text(json.dumps(meta, indent=2, default=_json_default))

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text())
        blocks = {}
        for name, info in meta["blocks"].items():
            frame = pd.read_csv(directory / info["file"], float_precision="round_trip")
            c = int(frame["chain"].max()) + 1
            n = int(frame["draw"].max()) + 1
            vals = frame.drop(columns=["chain", "draw"]).to_numpy()
            blocks[name] = vals.reshape((c, n) + tuple(info["shape"]))
        return cls(blocks, meta.get("acceptance"), meta.get("meta"))


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")
