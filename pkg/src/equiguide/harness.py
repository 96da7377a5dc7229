"""Config-driven experiment execution: data, training, runs, sweeps, reports.

Every output is a pure function of (config, seeds); run summaries carry a
manifest hash over the deterministic payload so reruns can be compared by
fingerprint alone.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULT_SCHEDULE, ConfigError
from .containers import save_tensors
from .datasets import Dataset, generate, load_dataset, ring_distance, save_dataset
from .equi import EquiLossConfig, load_probe, save_probe, train_autoencoder_augmented
from .gmm import GMMPrior, gmm_posterior_exact, sample_gmm
from .groups import make_group
from .metrics import diversity, psnr, sliced_wasserstein, ssim
from .models import (
    AnalyticGmmScore,
    load_score_model,
    save_score_model,
    train_denoiser,
)
from .operators import forward, make_operator
from .samplers import (
    SamplerConfig,
    Trajectory,
    dps_sample,
    equi_dps_sample,
    equi_psld_sample,
    equi_resample_sample,
    equi_sitcom_sample,
    equicon_psld_sample,
    equicon_resample_sample,
    psld_sample,
    resample_sample,
    sitcom_sample,
)
from .schedule import NoiseSchedule, make_linear_schedule

__all__ = [
    "cmd_gen_data",
    "cmd_train",
    "cmd_run",
    "cmd_sweep",
    "cmd_report",
    "build_schedule",
    "build_operator",
    "run_summary_hash",
]


def _out_dir(cfg: dict, override=None) -> Path:
    out = Path(override or cfg.get("out_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def build_schedule(cfg: dict) -> NoiseSchedule:
    sc = {**DEFAULT_SCHEDULE, **cfg.get("schedule", {})}
    return make_linear_schedule(int(sc["T"]), float(sc["beta_min"]), float(sc["beta_max"]))


def _dataset_paths(out: Path) -> tuple[Path, Path]:
    return out / "dataset.eqd", out / "testset.eqd"


def cmd_gen_data(cfg: dict, out_dir=None) -> dict:
    """Generate the train and held-out datasets declared in the config."""
    out = _out_dir(cfg, out_dir)
    d = cfg["dataset"]
    train = generate(d["kind"], d.get("spec", {}), int(d.get("n", 256)), int(d.get("seed", 0)))
    test = generate(d["kind"], d.get("spec", {}), int(d.get("test_n", 64)),
                    int(d.get("test_seed", d.get("seed", 0) + 10_000)))
    train_path, test_path = _dataset_paths(out)
    save_dataset(train_path, train)
    save_dataset(test_path, test)
    return {"train": str(train_path), "test": str(test_path),
            "n_train": len(train), "n_test": len(test)}


def _load_datasets(cfg: dict, out: Path) -> tuple[Dataset, Dataset]:
    train_path, test_path = _dataset_paths(out)
    if not train_path.exists() or not test_path.exists():
        cmd_gen_data(cfg, out)
    return load_dataset(train_path), load_dataset(test_path)


def cmd_train(cfg: dict, out_dir=None) -> dict:
    """Train whatever the config declares trainable; write checkpoints."""
    out = _out_dir(cfg, out_dir)
    sched = build_schedule(cfg)
    train_ds, _ = _load_datasets(cfg, out)
    written = {}

    probe = None
    probe_cfg = cfg.get("probe", {})
    if "train" in probe_cfg:
        action = make_group(probe_cfg.get("action", {"group": "flip-h"}))
        tr = dict(probe_cfg["train"])
        if probe_cfg.get("latent_action"):
            tr["latent_action"] = probe_cfg["latent_action"]
        probe = train_autoencoder_augmented(train_ds.items, action, tr)
        path = out / "probe.eqc"
        save_probe(path, probe)
        written["probe"] = str(path)

    sm = cfg.get("score_model", {})
    if sm.get("kind") == "trained-denoiser" and "train" in sm:
        tr = dict(sm["train"])
        space = tr.pop("space", "pixel")
        items = train_ds.items
        if space == "latent":
            if probe is None:
                raise ConfigError("latent-space training needs a trained probe in the same config")
            from .autodiff import Tensor

            ae = probe.meta["ae"]
            lat = ae.encode(Tensor(items)).data
            items = lat.reshape(len(items), *ae.latent_shape())
        model = train_denoiser(items, sched, tr)
        path = out / "denoiser.eqc"
        save_score_model(path, model)
        written["denoiser"] = str(path)
    return written


def _resolve_probe(cfg: dict, out: Path):
    pc = cfg.get("probe")
    if not pc:
        return None
    path = Path(pc["checkpoint"]) if "checkpoint" in pc else out / "probe.eqc"
    if not path.is_absolute():
        path = out / path.name if not path.exists() else path
    if not path.exists():
        raise ConfigError(f"missing probe checkpoint {path}")
    return load_probe(path)


def _resolve_score_model(cfg: dict, out: Path, sched: NoiseSchedule):
    sm = cfg.get("score_model", {})
    kind = sm.get("kind", "analytic-gmm")
    if kind == "analytic-gmm":
        prior_spec = sm.get("prior")
        if prior_spec is None:
            raise ConfigError("analytic-gmm score model needs a prior")
        from .datasets import mirror_symmetrize

        prior = GMMPrior(
            np.asarray(prior_spec["weights"], dtype=np.float64),
            np.asarray(prior_spec["means"], dtype=np.float64),
            np.asarray(prior_spec["covariances"], dtype=np.float64),
        )
        if prior_spec.get("mirror_swap") is not None:
            prior = mirror_symmetrize(prior, tuple(prior_spec["mirror_swap"]))
        return AnalyticGmmScore(prior, sched)
    path = Path(sm["checkpoint"]) if "checkpoint" in sm else out / "denoiser.eqc"
    if not path.is_absolute():
        path = out / path.name if not path.exists() else path
    if not path.exists():
        raise ConfigError(f"missing denoiser checkpoint {path}")
    model = load_score_model(path)
    return model


def build_operator(cfg: dict, grid_shape, mask_size=None):
    spec = dict(cfg.get("operator", {"kind": "identity"}))
    if mask_size is not None:
        h, w = grid_shape[-2], grid_shape[-1]
        spec["kind"] = "box-inpaint"
        spec["box"] = [(h - mask_size) // 2, (w - mask_size) // 2, mask_size, mask_size]
        spec["shape"] = [h, w]
    if spec["kind"] in ("box-inpaint", "random-inpaint") and "shape" not in spec:
        spec["shape"] = list(grid_shape)
    return make_operator(spec, grid_shape=tuple(grid_shape))


def _sampler_config(cfg: dict, seed: int, overrides: dict | None = None) -> SamplerConfig:
    sc = dict(cfg["sampler"])
    equi = dict(sc.pop("equi", {}))
    for k, v in (overrides or {}).items():
        if k == "lambda":
            equi["lam"] = v
        elif k == "period":
            equi["period"] = v
        elif k == "steps":
            sc["steps"] = v
        elif k == "k_split":
            sc["k_meas"], sc["k_equi"] = v
    return SamplerConfig(seed=seed, equi=EquiLossConfig(**equi), **sc)


def _run_sampler(alg: str, model, op, y, probe, scfg: SamplerConfig) -> Trajectory:
    if alg in ("dps", "equi-dps", "sitcom", "equi-sitcom"):
        if alg == "dps":
            return dps_sample(model, op, y, scfg)
        if alg == "equi-dps":
            return equi_dps_sample(model, op, y, probe, scfg)
        if alg == "sitcom":
            return sitcom_sample(model, op, y, scfg)
        return equi_sitcom_sample(model, op, y, probe, scfg)
    if probe is None or probe.meta.get("ae") is None:
        raise ConfigError(f"latent sampler '{alg}' needs an autoencoder probe")
    ae = probe.meta["ae"]
    if alg == "psld":
        return psld_sample(model, ae, op, y, scfg)
    if alg == "equi-psld":
        return equi_psld_sample(model, ae, op, y, probe, scfg)
    if alg == "equicon-psld":
        return equicon_psld_sample(model, ae, op, y, probe, scfg)
    if alg == "resample":
        return resample_sample(model, ae, op, y, scfg)
    if alg == "equi-resample":
        return equi_resample_sample(model, ae, op, y, probe, scfg)
    if alg == "equicon-resample":
        return equicon_resample_sample(model, ae, op, y, probe, scfg)
    raise ConfigError(f"unknown algorithm '{alg}'")


def _measurement_seed(seed: int, image_idx: int) -> int:
    return int(np.random.SeedSequence([seed, image_idx, 0xE0]).generate_state(1)[0])


def _chain_seed(seed: int, image_idx: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, image_idx, k, 0xC4]).generate_state(1)[0])


def run_cell(cfg: dict, model, probe, test_items: np.ndarray, seed: int,
             overrides: dict | None = None) -> dict:
    """Execute the configured sampler over the test images for one seed."""
    run_cfg = cfg.get("run", {})
    n_images = int(run_cfg.get("n_images", 1))
    k_samples = int(run_cfg.get("samples_per_image", 1))
    offset = int(run_cfg.get("image_offset", 0))
    peak = float(run_cfg.get("psnr_peak", 1.0))
    alg = cfg["sampler"]["algorithm"]
    mask_size = (overrides or {}).get("mask_size")

    grid_shape = test_items.shape[1:]
    op = build_operator(cfg, grid_shape, mask_size=mask_size)
    is_grid = len(grid_shape) == 2

    t0 = time.perf_counter()
    psnrs, ssims, intras, pixstds = [], [], [], []
    sw2s, manifold_dists = [], []
    counts_total: dict[str, int] = {}
    sample_hashes = []
    oracle_cfg = run_cfg.get("oracle", {})

    for i in range(n_images):
        x_true = test_items[(offset + i) % len(test_items)]
        meas = forward(op, x_true, _measurement_seed(seed, i))
        samples = []
        for k in range(k_samples):
            scfg = _sampler_config(cfg, _chain_seed(seed, i, k), overrides)
            traj = _run_sampler(alg, model, op, meas.y, probe, scfg)
            samples.append(traj.final)
            for key, v in traj.counts.items():
                counts_total[key] = counts_total.get(key, 0) + v
        for s in samples:
            psnrs.append(psnr(s, x_true, peak=peak))
            if is_grid:
                ssims.append(ssim(s, x_true))
            sample_hashes.append(hashlib.sha256(np.ascontiguousarray(s).tobytes()).hexdigest())
        if k_samples > 1:
            intra, pix = diversity(samples)
            intras.append(intra)
            pixstds.append(pix)
        if oracle_cfg.get("enabled") and hasattr(model, "prior") and op.is_linear:
            oracle = gmm_posterior_exact(model.prior, op, op.sigma_y, meas.y)
            n_oracle = int(oracle_cfg.get("n_samples", 256))
            ref = sample_gmm(oracle.posterior, n_oracle,
                             np.random.default_rng(_chain_seed(seed, i, 7001)))
            sw2s.append(sliced_wasserstein(samples, ref, n_proj=int(oracle_cfg.get("n_proj", 64)),
                                           rng=np.random.default_rng(_chain_seed(seed, i, 7002))))
            radius = oracle_cfg.get("ring_radius")
            if radius is not None:
                manifold_dists.append(
                    float(np.mean([ring_distance(s, float(radius)) for s in samples]))
                )

    row = {
        "seed": seed,
        "psnr": float(np.mean(psnrs)),
        "runtime_s": time.perf_counter() - t0,
        "sample_hashes": sample_hashes,
        **{k: int(v) for k, v in counts_total.items()},
    }
    if ssims:
        row["ssim"] = float(np.mean(ssims))
    if intras:
        row["intra_dist"] = float(np.mean(intras))
        row["pixel_std"] = float(np.mean(pixstds))
    if sw2s:
        row["sw2"] = float(np.mean(sw2s))
    if manifold_dists:
        row["manifold_dist"] = float(np.mean(manifold_dists))
    return row


def _canonical(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def run_summary_hash(payload: dict) -> str:
    return hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()


def cmd_run(cfg: dict, out_dir=None, seeds=None) -> dict:
    """Run the configured sampler for every seed; write the hashed summary."""
    out = _out_dir(cfg, out_dir)
    seeds = list(seeds if seeds is not None else cfg["seeds"])
    sched = build_schedule(cfg)
    _, test_ds = _load_datasets(cfg, out)
    model = _resolve_score_model(cfg, out, sched)
    probe = _resolve_probe(cfg, out)

    rows = []
    for seed in seeds:
        row = run_cell(cfg, model, probe, test_ds.items, seed)
        rows.append(row)

    deterministic = {
        "config": cfg,
        "seeds": seeds,
        "code_version": __version__,
        "results": [{k: v for k, v in r.items() if k != "runtime_s"} for r in rows],
    }
    summary = {
        "hash": run_summary_hash(deterministic),
        "payload": deterministic,
        "runtime_s": [r["runtime_s"] for r in rows],
    }
    (out / "run_summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1))
    return summary


_SWEEP_AXES = ("lambda", "period", "steps", "mask_size", "k_split")


def _sweep_cells(sweep: dict) -> list[dict]:
    axes = [(a, sweep[a]) for a in _SWEEP_AXES if a in sweep]
    if not axes:
        raise ConfigError("sweep section has no axes")
    cells = [{}]
    for name, values in axes:
        cells = [{**c, name: v} for c in cells for v in values]
    return cells


def cmd_sweep(cfg: dict, out_dir=None, seeds=None, threads: int = 1) -> Path:
    """Cartesian sweep over the configured axes; one CSV row per cell x seed."""
    out = _out_dir(cfg, out_dir)
    seeds = list(seeds if seeds is not None else cfg["seeds"])
    sched = build_schedule(cfg)
    _, test_ds = _load_datasets(cfg, out)
    model = _resolve_score_model(cfg, out, sched)
    probe = _resolve_probe(cfg, out)
    cells = _sweep_cells(cfg.get("sweep", {}))

    jobs = [(cell, seed) for cell in cells for seed in seeds]

    def work(job):
        cell, seed = job
        row = run_cell(cfg, model, probe, test_ds.items, seed, overrides=cell)
        row.pop("sample_hashes")
        for a in _SWEEP_AXES:
            row[a] = json.dumps(cell[a]) if a in cell else ""
        return row

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(work, jobs))
    else:
        rows = [work(j) for j in jobs]

    fields = sorted({k for r in rows for k in r})
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    return path


def cmd_report(run_dir, out_path=None) -> dict:
    """Aggregate a sweep CSV (and run summary if present) into plot-ready stats."""
    run_dir = Path(run_dir)
    report: dict = {"source": str(run_dir)}
    sweep_path = run_dir / "sweep.csv"
    if sweep_path.exists():
        with open(sweep_path) as fh:
            rows = list(csv.DictReader(fh))
        groups: dict[str, list[dict]] = {}
        for r in rows:
            key = _canonical({a: r.get(a, "") for a in _SWEEP_AXES})
            groups.setdefault(key, []).append(r)
        cells = []
        for key, rs in sorted(groups.items()):
            metrics = {}
            for col in rs[0]:
                if col in _SWEEP_AXES or col == "seed":
                    continue
                try:
                    vals = [float(r[col]) for r in rs if r[col] != ""]
                except ValueError:
                    continue
                if vals:
                    metrics[col] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)),
                                    "n": len(vals)}
            cells.append({"cell": json.loads(key), "metrics": metrics})
        report["cells"] = cells
    summary_path = run_dir / "run_summary.json"
    if summary_path.exists():
        report["run"] = json.loads(summary_path.read_text())
    out_path = Path(out_path) if out_path else run_dir / "report.json"
    out_path.write_text(json.dumps(report, sort_keys=True, indent=1))
    return report
