"""Command line interface: simulate, estimate eigenbases, fit, evaluate.

Every stage writes into a temporary directory under the output root and
renames it into place when it finishes, so a failed stage leaves no partial
outputs.  A ``manifest.json`` at the output root records the resolved
configuration, seeds, package versions and content hashes of inputs and
outputs; passing it back through ``--config`` reruns the same computation.

Exit codes: 0 success, 1 stage failure, 2 invalid configuration or usage.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
import zlib
from contextlib import contextmanager
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd

log = logging.getLogger("mixfda")

STAGES = ("simulate", "gfpca", "mfpca", "fit", "evaluate")
COMMANDS = STAGES + ("pipeline", "demo")
MANIFEST_VERSION = 1

DEFAULTS = {
    "simulate": {"n": 150, "regimes": ["sparse", "regular", "irregular"], "replicate": 0},
    "gfpca": {
        "regime": "irregular", "n_bins": 11, "halfwidth": 0.3, "pve": 0.99, "n_smooth_basis": 7,
        "location_covariates": [], "scale_covariates": [],
        "refit": {"method": "mcmc", "burnin": 500, "draws": 500, "thin": 1},
    },
    "mfpca": {"weighting": "equal", "pve": None},
    "fit": {
        "regime": "sparse", "basis": "true", "burnin": 1000, "draws": 1000, "thin": 5, "chains": 1,
        "covariates": [], "scale_covariates": [], "d_t": 14, "save_samples": False,
    },
    "evaluate": {"level": 0.95},
    "demo": {"n_sites": 4, "n_years": 3, "n_days": 4, "burnin": 300, "draws": 300, "thin": 1,
             "refit_burnin": 200, "refit_draws": 200, "pve": 0.98},
}


class ConfigError(Exception):
    """Invalid configuration; maps to exit code 2."""


class StageError(Exception):
    """A pipeline stage failed; maps to exit code 1."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage


# ------------------------------------------------------------------ config
def _schema():
    return json.loads(resources.files("mixfda").joinpath("configs/schema.json").read_text())


def bundled_config_path(name):
    path = resources.files("mixfda").joinpath(f"configs/{name}.json")
    return Path(str(path)) if path.is_file() else None


def load_config(path_or_name):
    """Read and validate a config file, a bundled config name or a manifest."""
    path = Path(path_or_name)
    if not path.exists():
        bundled = bundled_config_path(str(path_or_name))
        if bundled is None:
            raise ConfigError(f"config file not found: {path_or_name}")
        path = bundled
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON at line {err.lineno} column {err.colno}: {err.msg}") from err
    if isinstance(raw, dict) and "manifest_version" in raw:
        raw = raw["config"]
    validate_config(raw)
    return raw


def validate_config(cfg):
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for err in errors:
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            lines.append(f"config error at {where}: {err.message}")
        raise ConfigError("\n".join(lines))


def resolve_config(cfg):
    """Fill defaults so the manifest records every value actually used."""
    out = copy.deepcopy(cfg)
    for section, defaults in DEFAULTS.items():
        merged = copy.deepcopy(defaults)
        for key, value in out.get(section, {}).items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key].update(value)
            else:
                merged[key] = value
        out[section] = merged
    return out


def stage_seed(seed, stage):
    """Independent integer seed of a stage derived from the master seed."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(stage.encode())]).generate_state(1)[0])


# ------------------------------------------------------------------ output
@contextmanager
def staged_output(root: Path, name: str):
    """Directory that replaces ``root / name`` atomically on success and vanishes on failure."""
    root.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{name}-", dir=root))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    final = root / name
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)


def atomic_write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_tree(root: Path, subdirs):
    out = {}
    for sub in subdirs:
        base = root / sub
        if base.is_dir():
            for p in sorted(base.rglob("*")):
                if p.is_file():
                    out[str(p.relative_to(root))] = sha256_file(p)
    return out


def _versions():
    vers = {"python": platform.python_version(), "numpy": np.__version__, "pandas": pd.__version__}
    for dist in ("scipy", "jsonschema", "artifact"):
        try:
            vers[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            vers[dist] = None
    return vers


def write_manifest(root: Path, command, cfg, stages, inputs):
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "seed": cfg["seed"],
        "stage_seeds": {s: stage_seed(cfg["seed"], s) for s in stages},
        "config": cfg,
        "config_sha256": hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest(),
        "versions": _versions(),
        "inputs": inputs,
        "outputs": _hash_tree(root, stages),
    }
    atomic_write_text(root / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ------------------------------------------------------------------ stages
def _families_of(cfg):
    from .simulate import FAMILIES

    return tuple(cfg["data"]["families"]) if "data" in cfg else FAMILIES


def load_stage_data(cfg, root: Path, regime):
    """User data when the config has a ``data`` section, simulated data otherwise."""
    from .funcdata import load_long_csv

    if "data" in cfg:
        d = cfg["data"]
        return load_long_csv(d["path"], d["families"], domain=tuple(d.get("domain", (0.0, 1.0))),
                             covariates_path=d.get("covariates_path"), cyclic=d.get("cyclic", False))
    path = root / "simulate" / f"{regime}.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run the simulate stage first")
    return load_long_csv(path, _families_of(cfg), covariates_path=root / "simulate" / "covariates.csv")


def _input_hashes(cfg):
    if "data" not in cfg:
        return {}
    out = {cfg["data"]["path"]: sha256_file(cfg["data"]["path"])}
    if cfg["data"].get("covariates_path"):
        out[cfg["data"]["covariates_path"]] = sha256_file(cfg["data"]["covariates_path"])
    return out


def run_simulate(cfg, root: Path):
    from .funcdata import write_long_csv
    from .simulate import SimulationConfig, simulate_replicate

    s = cfg["simulate"]
    sim = SimulationConfig(n=s["n"], regimes=tuple(s["regimes"]), seed=stage_seed(cfg["seed"], "simulate"))
    dense, truth, regimes = simulate_replicate(sim, s["replicate"])
    with staged_output(root, "simulate") as tmp:
        write_long_csv(dense, tmp / "dense.csv", tmp / "covariates.csv")
        for name, ds in regimes.items():
            write_long_csv(ds, tmp / f"{name}.csv")
    with staged_output(root, "truth") as tmp:
        truth.save(tmp)


def run_gfpca(cfg, root: Path):
    from .gfpca import BinSpec, GFPCAConfig, RefitConfig, univariate_gfpca

    g = cfg["gfpca"]
    ds = load_stage_data(cfg, root, g["regime"])
    span = ds.domain[1] - ds.domain[0]
    bins = BinSpec.equidistant(g["n_bins"], g["halfwidth"] * (1.0 if "data" in cfg else span), ds.domain, ds.cyclic)
    refit = RefitConfig(method=g["refit"]["method"], burnin=g["refit"]["burnin"], draws=g["refit"]["draws"],
                        thin=g["refit"]["thin"], seed=stage_seed(cfg["seed"], "gfpca"))
    gcfg = GFPCAConfig(bins, g["pve"], g["n_smooth_basis"], tuple(g["location_covariates"]),
                       tuple(g["scale_covariates"]), refit)
    with staged_output(root, "gfpca") as tmp:
        summary = []
        for k in range(1, ds.K + 1):
            fpcas = univariate_gfpca(ds.select_dim(k), gcfg)
            for level, f in fpcas.items():
                f.save(tmp / f"dim{k}_{level}.csv")
                summary.append({"dim": k, "level": level, "M": f.M, "upsilon_sum": float(f.upsilon.sum())})
        pd.DataFrame(summary).to_csv(tmp / "summary.csv", index=False, float_format="%.17g")


def run_mfpca(cfg, root: Path):
    from .gfpca import UnivariateFPCA
    from .mfpca import ScoreMatrix, assemble_mfpca, eigenvalue_weights, truncate

    m = cfg["mfpca"]
    src = root / "gfpca"
    if not src.is_dir():
        raise FileNotFoundError(f"{src} not found; run the gfpca stage first")
    files = sorted(src.glob("dim*_*.csv"))
    by_level = {}
    for f in files:
        dim, level = f.stem[3:].split("_", 1)
        by_level.setdefault(level, {})[int(dim)] = UnivariateFPCA.load(f)
    with staged_output(root, "mfpca") as tmp:
        for level, fpcas in sorted(by_level.items()):
            uni = [fpcas[k] for k in sorted(fpcas)]
            weights = eigenvalue_weights([u.upsilon.sum() for u in uni]) if m["weighting"] == "eigenvalue" else None
            basis = assemble_mfpca(ScoreMatrix.from_fpcas(uni, level), uni, weights)
            if m["pve"] is not None:
                basis = truncate(basis, m["pve"])
            basis.save(tmp / f"{level}.csv")


def _bases_for_fit(cfg, root: Path):
    from .bases import EigenBasis

    if cfg["fit"]["basis"] == "true":
        path = root / "truth" / "basis.csv"
        if not path.exists():
            raise FileNotFoundError(f"{path} not found; the true basis needs the simulate stage")
        return {"unit": EigenBasis.load(path)}
    src = root / "mfpca"
    if not src.is_dir():
        raise FileNotFoundError(f"{src} not found; run the mfpca stage first")
    return {p.stem: EigenBasis.load(p) for p in sorted(src.glob("*.csv"))}


def run_fit(cfg, root: Path, threads=1):
    from .fitter import (LatentSpec, SamplerConfig, backfit_init, build_design, effect_curve_draws,
                         functional_regression_spec, mcmc_sample, posterior_mean_eta)

    f = cfg["fit"]
    ds = load_stage_data(cfg, root, f["regime"])
    bases = _bases_for_fit(cfg, root)
    latents = [LatentSpec(level, basis) for level, basis in bases.items()]
    spec = functional_regression_spec(ds.family_tags, tuple(f["covariates"]), tuple(f["scale_covariates"]), latents,
                                      d_t=f["d_t"], domain=ds.domain, cyclic=ds.cyclic)
    design = build_design(ds, spec)
    init = backfit_init(design)
    sampler = SamplerConfig(burnin=f["burnin"], draws=f["draws"], thin=f["thin"], chains=f["chains"],
                            seed=stage_seed(cfg["seed"], "fit"), n_jobs=threads)
    samples = mcmc_sample(design, init, sampler)

    grid = np.linspace(ds.domain[0], ds.domain[1], 101)
    frame = ds.prediction_frame(grid)
    new = design.for_newdata(frame)
    eta = posterior_mean_eta(samples, new)
    with staged_output(root, "fit") as tmp:
        parts = []
        for k in range(1, ds.K + 1):
            lat = np.zeros(new.rows[k].size)
            for lb in new.latents:
                if k in lb.dims:
                    rho = samples.mean(lb.name + "/scores")
                    idx = lb.index[k]
                    lat += np.einsum("nm,nm->n", lb.psi[k], rho[idx])
            part = {"dim": k, "unit": new.units[k]}
            if new.groups[k] is not None:
                part["group"] = new.groups[k]
            part.update({"t": new.t[k], "eta": eta[k][0], "latent": lat})
            parts.append(pd.DataFrame(part))
        pd.concat(parts, ignore_index=True).to_csv(tmp / "curves.csv", index=False, float_format="%.17g")

        effects, bands = [], []
        for k in range(1, ds.K + 1):
            row = {"dim": np.full(grid.size, k), "t": grid}
            for blk in design.terms_of(k, 1):
                if blk.kind == "functional-intercept":
                    col = "beta0"
                elif blk.kind == "linear-functional":
                    col = f"beta{1 + list(f['covariates']).index(blk.term.spec.covariates[0])}"
                else:
                    continue
                draws = effect_curve_draws(samples, design, blk.name, grid)
                row[col] = draws.mean(axis=0)
                q = np.quantile(draws, [0.025, 0.5, 0.975], axis=0)
                bands.append(pd.DataFrame({"dim": k, "term": col, "t": grid, "q0.025": q[0], "q0.5": q[1],
                                           "q0.975": q[2]}))
            effects.append(pd.DataFrame(row))
        pd.concat(effects, ignore_index=True).to_csv(tmp / "effects.csv", index=False, float_format="%.17g")
        if bands:
            pd.concat(bands, ignore_index=True).to_csv(tmp / "effect_bands.csv", index=False, float_format="%.17g")

        scal = []
        for blk in design.terms:
            if blk.kind != "constant":
                continue
            d = samples.draws(blk.name + "/coef")
            q = np.quantile(d, [0.025, 0.975], axis=0)
            names = ["intercept"] * blk.term.spec.intercept + list(blk.term.spec.covariates)
            for j, nm in enumerate(names):
                scal.append({"dim": blk.k, "param": blk.r, "name": nm, "mean": float(d[:, j].mean()),
                             "q0.025": float(q[0, j]), "q0.975": float(q[1, j])})
        pd.DataFrame(scal, columns=["dim", "param", "name", "mean", "q0.025", "q0.975"]).to_csv(
            tmp / "scalars.csv", index=False, float_format="%.17g")

        diag = []
        for name in samples.names():
            acc = samples.acceptance.get(name.split("/")[0])
            rhat = np.nan
            if samples.n_chains > 1 and samples.n_draws >= 4:
                rhat = float(np.nanmax(samples.rhat(name)))
            diag.append({"block": name, "acceptance": float(np.mean(acc)) if acc is not None else np.nan,
                         "max_rhat": rhat})
        pd.DataFrame(diag).to_csv(tmp / "diagnostics.csv", index=False, float_format="%.17g")
        if f["save_samples"]:
            samples.save(tmp / "samples")


def _read_curves(directory: Path):
    curves = pd.read_csv(directory / "curves.csv", float_precision="round_trip")
    effects = pd.read_csv(directory / "effects.csv", float_precision="round_trip")
    return curves, effects


def _curve_array(frame, column):
    keys = ["dim", "unit"] + (["group"] if "group" in frame.columns else [])
    frame = frame.sort_values(keys + ["t"])
    grid = np.unique(frame["t"].to_numpy())
    K = int(frame["dim"].max())
    n = len(frame) // (K * grid.size)
    return grid, frame[column].to_numpy().reshape(K, n, grid.size)


def evaluate_dirs(truth_dir: Path, est_dir: Path, level=0.95):
    """Metric rows comparing an estimate directory with a truth directory."""
    from .evaluate import CurveSet, pointwise_coverage, rrmse

    t_curves, t_eff = _read_curves(truth_dir)
    e_curves, e_eff = _read_curves(est_dir)
    rows = []
    for col in ("eta", "latent"):
        if col in t_curves.columns and col in e_curves.columns:
            grid, truth = _curve_array(t_curves, col)
            _, est = _curve_array(e_curves, col)
            for k, v in enumerate(rrmse(CurveSet(grid, truth), CurveSet(grid, est)), start=1):
                rows.append({"metric": f"rrmse_{col}", "dim": k, "value": float(v)})
    t_eff = t_eff.sort_values(["dim", "t"])
    e_eff = e_eff.sort_values(["dim", "t"])
    grid = np.unique(t_eff["t"].to_numpy())
    for col in [c for c in t_eff.columns if c.startswith("beta") and c in e_eff.columns]:
        truth = t_eff[col].to_numpy().reshape(-1, grid.size)
        est = e_eff[col].to_numpy().reshape(-1, grid.size)
        for k in range(truth.shape[0]):
            v = rrmse(CurveSet(grid, truth[k]), CurveSet(grid, est[k]))[0]
            rows.append({"metric": f"rrmse_{col}", "dim": k + 1, "value": float(v)})
    bands = est_dir / "effect_bands.csv"
    if bands.exists():
        b = pd.read_csv(bands, float_precision="round_trip")
        for (k, term), part in b.groupby(["dim", "term"], sort=True):
            if term not in t_eff.columns:
                continue
            truth = t_eff.loc[t_eff["dim"] == k, term].to_numpy()
            part = part.sort_values("t")
            inside = (part["q0.025"].to_numpy() <= truth) & (truth <= part["q0.975"].to_numpy())
            rows.append({"metric": f"coverage_{term}", "dim": int(k), "value": float(inside.mean())})
    truth_json = truth_dir / "truth.json"
    scal = est_dir / "scalars.csv"
    if truth_json.exists() and scal.exists():
        tj = json.loads(truth_json.read_text())
        s = pd.read_csv(scal, float_precision="round_trip")
        sc = s[s["param"] == 2]
        for nm, key in (("intercept", "gamma0"), ("z", "gamma1")):
            hit = sc[sc["name"] == nm]
            if len(hit) == 1:
                rows.append({"metric": f"bias_{key}", "dim": int(hit["dim"].iloc[0]),
                             "value": float(hit["mean"].iloc[0] - tj[key])})
    return rows


def run_evaluate(cfg, root: Path, truth_dir=None, est_dir=None):
    from .evaluate import write_metrics_csv

    truth_dir = Path(truth_dir) if truth_dir else root / "truth"
    est_dir = Path(est_dir) if est_dir else root / "fit"
    for d in (truth_dir, est_dir):
        if not (d / "curves.csv").exists():
            raise FileNotFoundError(f"{d / 'curves.csv'} not found")
    rows = evaluate_dirs(truth_dir, est_dir, cfg["evaluate"]["level"])
    with staged_output(root, "evaluate") as tmp:
        write_metrics_csv(tmp / "metrics.csv", rows, ["metric", "dim", "value"])


def run_demo_stage(cfg, root: Path):
    from .demo import DemoConfig, prediction_table, run_demo
    from .gfpca import RefitConfig

    d = cfg["demo"]
    seed = stage_seed(cfg["seed"], "demo")
    dc = DemoConfig(n_sites=d["n_sites"], n_years=d["n_years"], n_days=d["n_days"], seed=seed, burnin=d["burnin"],
                    draws=d["draws"], thin=d["thin"], pve=d["pve"],
                    refit=RefitConfig(method="mcmc", burnin=d["refit_burnin"], draws=d["refit_draws"], seed=seed))
    result = run_demo(dc)
    table = prediction_table(result)
    quant = table[[c for c in table.columns if c.startswith("q")]].to_numpy()
    summary = {
        "finite": bool(np.all(np.isfinite(table.select_dtypes("number").to_numpy()))),
        "monotone_quantiles": bool(np.all(np.diff(quant, axis=1) >= 0)),
        "n_functions": {level: int(b.M) for level, b in result.bases.items()},
    }
    if not (summary["finite"] and summary["monotone_quantiles"]):
        raise RuntimeError(f"demo summaries failed checks: {summary}")
    with staged_output(root, "demo") as tmp:
        table.to_csv(tmp / "predictions.csv", index=False, float_format="%.17g")
        for level, b in result.bases.items():
            b.save(tmp / f"basis_{level}.csv")
        (tmp / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------- main
def _parser():
    p = argparse.ArgumentParser(prog="mixfda", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="config JSON, bundled config name or manifest.json")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--chains", type=int, help="override the number of MCMC chains")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, help="worker processes for independent chains")
    p.add_argument("--dry-run", action="store_true", help="validate the configuration and stop")
    p.add_argument("--truth", help="truth directory for evaluate")
    p.add_argument("--estimate", help="estimate directory for evaluate")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _apply_overrides(cfg, args):
    cfg = copy.deepcopy(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.chains is not None:
        cfg.setdefault("fit", {})["chains"] = args.chains
    if args.out is not None:
        cfg["out"] = args.out
    if args.threads is not None:
        cfg["threads"] = args.threads
    validate_config(cfg)
    return cfg


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(_apply_overrides(load_config(args.config), args))
    except ConfigError as err:
        print(str(err), file=sys.stderr)
        return 2
    root = Path(cfg.get("out", "runs/default"))
    if args.dry_run:
        print(f"config valid; command {args.command!r} would write to {root}")
        return 0
    threads = cfg.get("threads", 1)
    stages = {
        "simulate": ["simulate"],
        "gfpca": ["gfpca"],
        "mfpca": ["mfpca"],
        "fit": ["fit"],
        "evaluate": ["evaluate"],
        "pipeline": list(STAGES),
        "demo": ["demo"],
    }[args.command]
    if "data" in cfg:
        stages = [s for s in stages if s != "simulate"]
    runners = {
        "simulate": lambda: run_simulate(cfg, root),
        "gfpca": lambda: run_gfpca(cfg, root),
        "mfpca": lambda: run_mfpca(cfg, root),
        "fit": lambda: run_fit(cfg, root, threads),
        "evaluate": lambda: run_evaluate(cfg, root, args.truth, args.estimate),
        "demo": lambda: run_demo_stage(cfg, root),
    }
    for stage in stages:
        log.info("running stage %s", stage)
        try:
            runners[stage]()
        except Exception as err:  # noqa: BLE001 - every stage failure maps to exit 1
            print(str(StageError(stage, err)), file=sys.stderr)
            return 1
    written = [s for s in stages] + (["truth"] if "simulate" in stages else [])
    write_manifest(root, args.command, cfg, written, _input_hashes(cfg))
    return 0


if __name__ == "__main__":
    sys.exit(main())
