"""End-to-end runs: data preparation, training with validation, evaluation,
lambda sweeps and constrained sampling.

Run directory layout::

    <run>/config.txt         resolved ExperimentConfig
    <run>/manifest.txt       id split role
    <run>/history.txt        epoch metric split value backend
    <run>/epochs.csv         per-epoch training losses
    <run>/best_epoch.txt     selected epoch and its validation scores
    <run>/ckpt/epoch_<N>/    checkpoints, ckpt/latest points at the newest
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import config as cfgio
from .config import ConfigError, ExperimentConfig
from .constraints import (ConstraintMap, InvalidInputError, NoiseSpec, add_measurement_noise,
                          conditioning_batch, satisfied_fraction, stack_maps)
from .data import (carve_splits, load_images, make_brick_texture, make_channel_facies,
                   make_shapes, read_constraint_file, sample_texture_patches,
                   split_with_constraint_sets, to_unit_range, write_manifest)
from .metrics import (CNNClassifierExtractor, RandomProjectionExtractor, chi2_distance,
                      constraint_mse, constraint_mse_per_value, diversity_score,
                      extract_features, fid,
                      grayscale, hog_descriptor, lbp_descriptor, mean_curves, mean_descriptor,
                      write_curves_csv)
from .trainer import (MetricsHistory, NumericalAbort, TrainConfig, new_state, persist_state,
                      resolve_checkpoint, restore_state, run_epoch, select_best_epoch)
from .zoo import ARCHITECTURES, image_shape_of, load_spec

log = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 10_007


@dataclass
class PreparedData:
    split: object  # DatasetSplit
    image_shape: tuple
    train_labels: np.ndarray | None = None


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    return TrainConfig(**{k: v for k, v in dataclasses.asdict(cfg).items() if k in names})


def _load_raw_images(cfg: ExperimentConfig, shape, rng):
    n, p, c = shape
    labels = None
    if cfg.dataset == "shapes":
        if c != 1 or n != p:
            raise ConfigError(f"dataset: 'shapes' is square grayscale but {cfg.arch} makes {shape}")
        images, labels = make_shapes(cfg.dataset_size, n, rng)
    elif cfg.dataset in ("texture", "subsurface"):
        if cfg.texture_source:
            from PIL import Image

            source = to_unit_range(np.asarray(Image.open(cfg.texture_source)))
        elif cfg.dataset == "texture":
            source = make_brick_texture(max(4 * n, 192), max(6 * p, 256), rng)
        else:
            source = make_channel_facies(max(4 * n, 192), max(6 * p, 256), rng)
        if source.ndim == 2:
            source = source[..., None]
        if source.shape[2] != c:
            source = (np.repeat(grayscale(source)[..., None], c, axis=2) if c != 1
                      else grayscale(source)[..., None])
        images = sample_texture_patches(source, cfg.dataset_size, rng, patch=n)
    else:
        images, labels = load_images(cfg.dataset)
        images = images[: cfg.dataset_size]
        labels = None if labels is None else labels[: cfg.dataset_size]
        if images.shape[1:] != tuple(shape):
            raise ConfigError(f"dataset: images are {images.shape[1:]} but {cfg.arch} "
                              f"makes {tuple(shape)}")
    return images, labels


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    """Build the dataset split deterministically from ``cfg.data_seed``."""
    g_name, _ = ARCHITECTURES[cfg.arch]
    shape = image_shape_of(load_spec(g_name))
    rng = np.random.default_rng(cfg.data_seed)
    images, labels = _load_raw_images(cfg, shape, rng)
    parts, ids, labs = carve_splits(images, cfg.validation_size, cfg.test_size, rng, labels)
    split = split_with_constraint_sets(parts, rng, cfg.constraint_density, ids=ids, labels=labs)
    if cfg.noise_sigma > 0:
        for name, maps in split.constraints.items():
            split.constraints[name] = [
                add_measurement_noise(m, NoiseSpec(cfg.noise_sigma, seed=cfg.data_seed * 7919 + k))
                for k, m in enumerate(maps)
            ]
    for name in split.images:
        overlap = set(split.image_ids[name]) & set(split.provenance[name])
        assert not overlap, f"constraint sources leaked into {name} images: {sorted(overlap)}"
    return PreparedData(split, tuple(shape), split.labels.get("train"))


def make_extractor(cfg: ExperimentConfig, data: PreparedData):
    if cfg.backend == "random-projection":
        return RandomProjectionExtractor(cfg.backend_dim, seed=cfg.data_seed)
    if data.train_labels is None:
        raise ConfigError("backend: 'cnn' needs a labelled dataset")
    return CNNClassifierExtractor(data.split.images["train"], data.train_labels,
                                  seed=cfg.data_seed)


def _chw(images) -> torch.Tensor:
    return torch.as_tensor(np.asarray(images).transpose(0, 3, 1, 2), dtype=torch.float32)


def generate_for_maps(G, latent, maps, seed: int, batch: int = 64) -> np.ndarray:
    """One sample per map with a fixed latent stream; returns ``(L, n, p, c)``."""
    gen = torch.Generator().manual_seed(seed)
    params = list(G.parameters()) if isinstance(G, torch.nn.Module) else []
    dtype = params[0].dtype if params else torch.float64
    was_training = getattr(G, "training", False)
    if was_training:
        G.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, len(maps), batch):
            chunk = maps[i:i + batch]
            values, mask = stack_maps(chunk, dtype=dtype)
            z = latent.sample(len(chunk), gen, dtype) if latent is not None else None
            outs.append(G(conditioning_batch(values, mask), z).double().numpy())
    if was_training:
        G.train()
    return np.concatenate(outs).transpose(0, 2, 3, 1)


def split_metrics(G, latent, real_images, maps, extractor, seed: int) -> dict:
    generated = generate_for_maps(G, latent, maps, seed)
    real = extract_features(real_images, extractor)
    fake = extract_features(generated, extractor)
    return {
        "fid": fid(real, fake),
        "mse": constraint_mse(maps, generated),
        "mse_per_value": constraint_mse_per_value(maps, generated),
    }


def _write_history(path: Path, history: MetricsHistory, backend: str) -> None:
    lines = []
    for rec in history.records:
        for key in ("fid", "mse", "mse_per_value"):
            if key in rec:
                lines.append(f"{rec['epoch']} {key} {history.split} {rec[key]:.6f} {backend}")
    path.write_text("\n".join(lines) + "\n")


def run_label(cfg: ExperimentConfig) -> str:
    if cfg.lam == 0:
        return "baseline: unregularized conditional generator (lambda = 0)"
    return f"regularized (lambda = {cfg.lam:g})"


def run_training(cfg: ExperimentConfig, run_dir, resume: bool = True) -> Path:
    """Train, validate every epoch, checkpoint, and record the selected epoch."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfgio.dump(cfg))
    data = prepare_data(cfg)
    write_manifest(data.split, run_dir / "manifest.txt")
    extractor = make_extractor(cfg, data)

    g_name, d_name = ARCHITECTURES[cfg.arch]
    ckpt = run_dir / "ckpt"
    if resume and (ckpt / "latest").is_file():
        state = restore_state(ckpt)
        log.info("resuming %s from epoch %d", run_dir, state.epoch)
    else:
        state = new_state(g_name, d_name, train_config(cfg), data.image_shape)

    images = _chw(data.split.images["train"])
    constraints = stack_maps(data.split.constraints["train"], dtype=torch.float32)
    val_images = data.split.images["validation"]
    val_maps = data.split.constraints["validation"]
    backend = extractor.name

    epochs_csv = run_dir / "epochs.csv"
    if state.epoch == 0:
        epochs_csv.write_text("epoch,iterations,d_loss,g_adv,g_rec,g_total\n")
    while state.epoch < cfg.epochs:
        try:
            stats = run_epoch(state, images, constraints)
        except NumericalAbort as exc:
            (run_dir / "abort.json").write_text(json.dumps(exc.snapshot, sort_keys=True))
            raise
        with epochs_csv.open("a") as fh:
            fh.write(f"{stats.epoch},{stats.iterations},{stats.d_loss:.6f},{stats.g_adv:.6f},"
                     f"{stats.g_rec:.6f},{stats.g_total:.6f}\n")
        m = split_metrics(state.generator, state.latent, val_images, val_maps, extractor,
                          cfg.seed + EVAL_SEED_OFFSET)
        state.history.add(state.epoch, m["fid"], m["mse"], mse_per_value=m["mse_per_value"])
        persist_state(state, ckpt)
        _write_history(run_dir / "history.txt", state.history, backend)
        log.info("epoch %d: d=%.4f g_adv=%.4f g_rec=%.4f fid=%.4f mse=%.4f", stats.epoch,
                 stats.d_loss, stats.g_adv, stats.g_rec, m["fid"], m["mse"])

    best = select_best_epoch(state.history)
    rec = next(r for r in state.history.records if r["epoch"] == best)
    (run_dir / "best_epoch.txt").write_text(
        f"# {run_label(cfg)}\n# backend {backend}\n"
        f"epoch {best}\nfid {rec['fid']:.6f}\nmse {rec['mse']:.6f}\n"
        f"mse_per_value {rec['mse_per_value']:.6f}\n"
    )
    return run_dir


def best_checkpoint(run_dir) -> Path:
    run_dir = Path(run_dir)
    for line in (run_dir / "best_epoch.txt").read_text().splitlines():
        if line.startswith("epoch "):
            return run_dir / "ckpt" / f"epoch_{int(line.split()[1])}"
    raise FileNotFoundError(f"no best epoch recorded in {run_dir}")


# -- evaluation -----------------------------------------------------------------

def evaluate_generator(G, latent, cfg: ExperimentConfig, data: PreparedData, extractor,
                       out_dir, epoch: int = 0, split: str = "test") -> dict:
    """Score a generator on one split and write the report plus connectivity CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    real = data.split.images[split]
    maps = data.split.constraints[split]
    seed = cfg.seed + EVAL_SEED_OFFSET
    generated = generate_for_maps(G, latent, maps, seed)
    scores = {
        "mse": constraint_mse(maps, generated),
        "mse_per_value": constraint_mse_per_value(maps, generated),
        "fid": fid(extract_features(real, extractor), extract_features(generated, extractor)),
    }
    n, p, _ = data.image_shape
    if min(n, p) >= 8:
        scores["hog_chi2"] = chi2_distance(mean_descriptor(hog_descriptor(x) for x in real),
                                           mean_descriptor(hog_descriptor(x) for x in generated))
    for radius in (1, 2):
        if min(n, p) > 2 * radius:
            scores[f"lbp{radius}_chi2"] = chi2_distance(
                mean_descriptor(lbp_descriptor(x, radius) for x in real),
                mean_descriptor(lbp_descriptor(x, radius) for x in generated))
    div = []
    for k, cmap in enumerate(maps[:8]):
        div.append(diversity_score(G, cmap, cfg.diversity_pairs, latent, rng=seed + k))
    scores["diversity"] = float(np.mean(div))

    max_lag = min(cfg.max_lag, max(n, p) - 1)
    write_curves_csv(mean_curves((grayscale(x) for x in generated), max_lag),
                     out_dir / "connectivity_generated.csv")
    write_curves_csv(mean_curves((grayscale(x) for x in real), max_lag),
                     out_dir / "connectivity_real.csv")
    with open(out_dir / "report.txt", "w") as fh:
        for key, value in scores.items():
            fh.write(f"{epoch} {key} {split} {value:.6f} {extractor.name}\n")
    return scores


def evaluate_checkpoint(cfg: ExperimentConfig, checkpoint, out_dir) -> dict:
    ckpt = resolve_checkpoint(checkpoint)
    state = restore_state(ckpt)
    data = prepare_data(cfg)
    extractor = make_extractor(cfg, data)
    run_cfg = ckpt.parent.parent / "config.txt"
    if run_cfg.is_file():
        trained = cfgio.parse_pairs(run_cfg.read_text()).get("backend")
        if trained is not None and trained != cfg.backend:
            log.warning("feature backend mismatch: trained with %s, evaluating with %s",
                        trained, cfg.backend)
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            flag = Path(out_dir) / "BACKEND_MISMATCH"
            flag.write_text(f"train {trained}\neval {cfg.backend}\n")
    return evaluate_generator(state.generator, state.latent, cfg, data, extractor, out_dir,
                              epoch=state.epoch)


# -- lambda sweep -----------------------------------------------------------------

def sweep(cfg: ExperimentConfig, out_dir) -> list:
    """Train every (lambda, seed) pair and tabulate test scores at each run's best epoch."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not cfg.lambda_grid:
        raise ConfigError("lambda_grid: must not be empty")
    rows = []
    for lam in cfg.lambda_grid:
        for seed in cfg.seeds:
            run_cfg = dataclasses.replace(cfg, lam=lam, seed=seed)
            run_dir = out_dir / f"lambda_{lam:g}" / f"seed_{seed}"
            row = {"lambda": lam, "seed": seed, "status": "ok", "best_epoch": "",
                   "mse": math.nan, "mse_per_value": math.nan, "fid": math.nan}
            try:
                run_training(run_cfg, run_dir, resume=False)
                best = best_checkpoint(run_dir)
                state = restore_state(best)
                data = prepare_data(run_cfg)
                scores = evaluate_generator(state.generator, state.latent, run_cfg, data,
                                            make_extractor(run_cfg, data), run_dir / "test",
                                            epoch=state.epoch)
                row.update(best_epoch=state.epoch, mse=scores["mse"],
                           mse_per_value=scores["mse_per_value"], fid=scores["fid"])
            except (NumericalAbort, RuntimeError, ValueError) as exc:
                log.warning("run lambda=%g seed=%d failed: %s", lam, seed, exc)
                row["status"] = f"failed: {type(exc).__name__}"
            rows.append(row)
    write_sweep_tables(rows, out_dir)
    return rows


def summarize_sweep(rows) -> list:
    out = []
    for lam in sorted({r["lambda"] for r in rows}):
        ok = [r for r in rows if r["lambda"] == lam and r["status"] == "ok"]
        med = {k: (float(np.median([r[k] for r in ok])) if ok else math.nan)
               for k in ("mse", "mse_per_value", "fid")}
        out.append({"lambda": lam, "n_success": len(ok),
                    "n_failed": sum(1 for r in rows if r["lambda"] == lam) - len(ok), **med})
    return out


def write_sweep_tables(rows, out_dir) -> None:
    out_dir = Path(out_dir)
    with open(out_dir / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "seed", "status", "best_epoch", "mse", "mse_per_value", "fid"])
        for r in rows:
            w.writerow([f"{r['lambda']:g}", r["seed"], r["status"], r["best_epoch"],
                        f"{r['mse']:.6f}", f"{r['mse_per_value']:.6f}", f"{r['fid']:.6f}"])
    summary = summarize_sweep(rows)
    with open(out_dir / "tradeoff.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "n_success", "n_failed", "median_mse", "median_mse_per_value",
                    "median_fid"])
        for s in summary:
            w.writerow([f"{s['lambda']:g}", s["n_success"], s["n_failed"], f"{s['mse']:.6f}",
                        f"{s['mse_per_value']:.6f}", f"{s['fid']:.6f}"])
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    lams = [s["lambda"] for s in summary]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    axes[0].plot(lams, [s["mse"] for s in summary], "o-")
    axes[0].set(xlabel="lambda", ylabel="median MSE (sum over constrained values)")
    axes[1].plot(lams, [s["fid"] for s in summary], "o-")
    axes[1].set(xlabel="lambda", ylabel="median FID")
    ok = [r for r in rows if r["status"] == "ok"]
    sc = axes[2].scatter([r["mse"] for r in ok], [r["fid"] for r in ok],
                         c=[r["lambda"] for r in ok])
    axes[2].set(xlabel="MSE", ylabel="FID")
    fig.colorbar(sc, ax=axes[2], label="lambda")
    for ax in axes[:2]:
        if all(v > 0 for v in lams):
            ax.set_xscale("log")
    fig.tight_layout()
    fig.savefig(out_dir / "tradeoff.png", dpi=100)
    plt.close(fig)


# -- sampling with overlays ----------------------------------------------------------

GREEN = np.array([0, 255, 0], dtype=np.uint8)
RED = np.array([255, 0, 0], dtype=np.uint8)


def to_uint8_rgb(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return np.clip(np.round((img + 1) * 127.5), 0, 255).astype(np.uint8)


def render_overlay(image, cmap: ConstraintMap, eps: float = 0.1, block: int = 3) -> np.ndarray:
    """RGB rendering with each constrained location painted green (satisfied) or red.

    ``block`` is the painted square size; ``block=1`` paints single pixels.
    """
    _, flags = satisfied_fraction(cmap, image, eps)
    rgb = to_uint8_rgb(image)
    n, p = cmap.mask.shape
    half = block // 2
    for (r, c), ok in zip(cmap.locations(), flags):
        rgb[max(r - half, 0):min(r + half + 1, n), max(c - half, 0):min(c + half + 1, p)] = (
            GREEN if ok else RED)
    return rgb


def sample_with_overlays(G, latent, cmap: ConstraintMap, n: int, eps: float, out_dir,
                         seed: int = 0, block: int = 3) -> dict:
    """Draw ``n`` samples with distinct latents and write images, overlays and a summary."""
    from PIL import Image

    shape = getattr(G, "image_shape", None)
    if shape is not None and tuple(shape) != tuple(cmap.shape):
        raise InvalidInputError(
            f"constraint map {cmap.shape} does not fit generator output {shape}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = generate_for_maps(G, latent, [cmap] * n, seed)
    fractions = []
    for k, img in enumerate(samples):
        frac, _ = satisfied_fraction(cmap, img, eps)
        fractions.append(frac)
        Image.fromarray(to_uint8_rgb(img)).save(out_dir / f"sample_{k}.png")
        Image.fromarray(render_overlay(img, cmap, eps, block)).save(out_dir / f"overlay_{k}.png")
    gray = [grayscale(s) for s in samples]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    diversity = (float(np.mean([np.abs(gray[i] - gray[j]).mean() for i, j in pairs]))
                 if pairs else math.nan)
    with open(out_dir / "samples.txt", "w") as fh:
        for k, frac in enumerate(fractions):
            fh.write(f"sample {k} satisfied_fraction {frac:.6f}\n")
        fh.write(f"eps {eps:g}\n")
        if pairs:
            fh.write(f"diversity {diversity:.6f}\n")
    return {"fractions": fractions, "diversity": diversity, "samples": samples}


def sample_checkpoint(checkpoint, constraint_file, n: int, eps: float, out_dir, seed: int = 0,
                      block: int = 3) -> dict:
    state = restore_state(checkpoint)
    cmap = read_constraint_file(constraint_file)
    return sample_with_overlays(state.generator, state.latent, cmap, n, eps, out_dir, seed, block)

