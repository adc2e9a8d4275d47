"""Adversarial training with the pixel-constraint regulariser.

``train_epoch`` runs the plain loop (one D step, then one G step on freshly
drawn constraint maps and latents); ``train_epoch_pac`` is the packed
variant where the discriminator judges pairs of samples. Validation,
history files and the epoch loop live in :mod:`pixgan.experiment`.
"""

from __future__ import annotations

import json
import logging
import math
import pickle
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import config as cfgio
from .constraints import conditioning_batch
from .objectives import (LatentSpec, combined_generator_loss, discriminator_loss,
                         generator_adversarial_loss, reconstruction_loss)
from .zoo import build_discriminator, build_generator, pac_stack, parse_spec

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class NumericalAbort(RuntimeError):
    """A loss became NaN or infinite; ``snapshot`` holds the offending values."""

    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lam: float = 1.0
    constraint_density: float = 0.005
    noise_sigma: float = 0.0
    latent_distribution: str = "uniform"
    batch_size: int = 32
    epochs: int = 10
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    optimizer: str = "adam"
    pac: int = 1
    pac_generator_step: str = "paired"
    loss_variant: str = "saturating"
    conditional_d: bool = False
    d_input_noise: float = 0.1
    seed: int = 0
    batch_reduction: str = "mean"

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lam must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.pac not in (1, 2):
            raise ValueError("pac must be 1 or 2")
        if self.pac_generator_step not in ("paired", "duplicate"):
            raise ValueError("pac_generator_step must be 'paired' or 'duplicate'")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


@dataclass
class EpochStats:
    epoch: int
    iterations: int
    d_loss: float
    g_adv: float
    g_rec: float
    g_total: float


@dataclass
class MetricsHistory:
    split: str = "validation"
    records: list = field(default_factory=list)

    def add(self, epoch: int, fid: float, mse: float, **aux) -> None:
        if self.records and epoch <= self.records[-1]["epoch"]:
            raise ValueError("epochs must be strictly increasing")
        rec = {"epoch": int(epoch), "fid": float(fid), "mse": float(mse),
               **{k: float(v) for k, v in aux.items()}}
        bad = [k for k, v in rec.items() if not math.isfinite(v)]
        if bad:
            raise ValueError(f"non-finite metrics {bad} at epoch {epoch}")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def to_json(self) -> str:
        return json.dumps({"split": self.split, "records": self.records}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsHistory":
        d = json.loads(text)
        return cls(d["split"], d["records"])


def select_best_epoch(history) -> int:
    """Epoch closest to the (FID_min, MSE_min) corner after min-max scaling of both columns.

    A column with zero range contributes 0. Ties go to the earliest epoch.
    """
    records = history.records if isinstance(history, MetricsHistory) else list(history)
    if not records:
        raise ValueError("cannot select from an empty history")

    def scaled(key):
        col = np.array([r[key] for r in records], dtype=np.float64)
        span = col.max() - col.min()
        return np.zeros_like(col) if span == 0 else (col - col.min()) / span

    dist = np.sqrt(scaled("fid") ** 2 + scaled("mse") ** 2)
    return int(records[int(np.argmin(dist))]["epoch"])


@dataclass
class TrainState:
    generator: torch.nn.Module
    discriminator: torch.nn.Module
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    cfg: TrainConfig
    rng: torch.Generator
    latent: LatentSpec | None
    epoch: int = 0
    history: MetricsHistory = field(default_factory=MetricsHistory)


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(params, lr=cfg.lr)
    return torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))


def new_state(g_spec, d_spec, cfg: TrainConfig, image_shape=None) -> TrainState:
    """Build G, D, optimisers and the RNG stream for a fresh run."""
    from .zoo import image_shape_of, load_spec

    g_spec = load_spec(g_spec) if isinstance(g_spec, str) else g_spec
    image_shape = tuple(image_shape or image_shape_of(g_spec))
    latent = (LatentSpec(g_spec.latent_shape, cfg.latent_distribution)
              if g_spec.latent_shape else None)
    G = build_generator(g_spec, image_shape, latent, seed=cfg.seed)
    D = build_discriminator(d_spec, image_shape, conditional=cfg.conditional_d, pack=cfg.pac,
                            seed=cfg.seed + 1)
    return TrainState(G, D, make_optimizer(G.parameters(), cfg),
                      make_optimizer(D.parameters(), cfg), cfg,
                      torch.Generator().manual_seed(cfg.seed), latent)


def _d_noise_std(state: TrainState, total_epochs: int) -> float:
    frac = min(state.epoch / max(total_epochs, 1), 1.0)
    return state.cfg.d_input_noise * (1.0 - frac)


def _noisy(x, std, rng):
    if std == 0:
        return x
    return x + std * torch.randn(x.shape, generator=rng, dtype=x.dtype)


def _sample_latent(state, m):
    return None if state.latent is None else state.latent.sample(m, state.rng)


def _sample_maps(state, constraints, m):
    values, mask = constraints
    idx = torch.randint(len(values), (m,), generator=state.rng)
    return values[idx], mask[idx]


def fresh_real_maps(x, density, rng):
    """Constraint values sampled from the real images themselves (for a conditional D)."""
    b, _, n, p = x.shape
    k = max(1, int(round(density * n * p)))
    mask = torch.zeros(b, n * p, dtype=x.dtype)
    for i in range(b):
        mask[i, torch.randperm(n * p, generator=rng)[:k]] = 1
    mask = mask.view(b, 1, n, p)
    return mask * x


def _check_finite(state, it, **losses):
    vals = {k: float(v.detach()) for k, v in losses.items()}
    if not all(math.isfinite(v) for v in vals.values()):
        snapshot = {"epoch": state.epoch, "iteration": it, **vals}
        raise NumericalAbort(f"non-finite loss at epoch {state.epoch}, iteration {it}: {vals}",
                             snapshot)
    return vals


def generator_step(state: TrainState, values, mask, z, z_b=None):
    """One G update on the given constraint batch and latents; returns the loss breakdown.

    With a packed discriminator, ``z_b`` is the second latent draw; the two
    generated batches share the constraint maps.
    """
    cfg, G, D = state.cfg, state.generator, state.discriminator
    std = _d_noise_std(state, cfg.epochs)
    cond = conditioning_batch(values, mask)
    fake = G(cond, z)
    g_rec = reconstruction_loss(values, mask, fake)
    if cfg.pac == 2:
        if cfg.pac_generator_step == "paired":
            fake_b = G(cond, z_b)
            g_rec = 0.5 * (g_rec + reconstruction_loss(values, mask, fake_b))
        else:
            fake_b = fake
        d_in = pac_stack(fake, fake_b)
    else:
        d_in = fake
    d_fake = D(_noisy(d_in, std, state.rng), values if cfg.conditional_d else None)
    g_adv = generator_adversarial_loss(d_fake, cfg.loss_variant)
    losses = combined_generator_loss(g_adv, g_rec, cfg.lam)
    state.opt_g.zero_grad()
    losses.g_total.backward()
    state.opt_g.step()
    return losses


def discriminator_step(state: TrainState, x_real, values, mask, z, z_b=None):
    cfg, G, D = state.cfg, state.generator, state.discriminator
    std = _d_noise_std(state, cfg.epochs)
    cond = conditioning_batch(values, mask)
    with torch.no_grad():
        fake = G(cond, z)
        if cfg.pac == 2:
            fake = pac_stack(fake, G(cond, z_b))
    if cfg.conditional_d:
        real_maps = fresh_real_maps(x_real[:, : values.shape[1]], cfg.constraint_density,
                                    state.rng)
        d_real = D(_noisy(x_real, std, state.rng), real_maps)
        d_fake = D(_noisy(fake, std, state.rng), values)
    else:
        d_real = D(_noisy(x_real, std, state.rng))
        d_fake = D(_noisy(fake, std, state.rng))
    d_loss = discriminator_loss(d_real, d_fake)
    state.opt_d.zero_grad()
    d_loss.backward()
    state.opt_d.step()
    return d_loss


def _run_epoch(state: TrainState, images: torch.Tensor, constraints, packed: bool) -> EpochStats:
    cfg = state.cfg
    m = cfg.batch_size
    n_iter = len(images) // m
    if n_iter == 0:
        raise ValueError(f"{len(images)} images cannot fill a batch of {m}")
    state.generator.train()
    state.discriminator.train()
    perm = torch.randperm(len(images), generator=state.rng)
    sums = np.zeros(4)
    for it in range(n_iter):
        x = images[perm[it * m:(it + 1) * m]]
        if packed:
            x = pac_stack(x, images[torch.randperm(len(images), generator=state.rng)[:m]])
        values, mask = _sample_maps(state, constraints, m)
        z = _sample_latent(state, m)
        z_b = _sample_latent(state, m) if packed else None
        d_loss = discriminator_step(state, x, values, mask, z, z_b)

        # fresh constraint maps and latents for the generator update
        values, mask = _sample_maps(state, constraints, m)
        z = _sample_latent(state, m)
        z_b = _sample_latent(state, m) if packed else None
        losses = generator_step(state, values, mask, z, z_b)
        vals = _check_finite(state, it, d_loss=d_loss, g_adv=losses.g_adv,
                             g_rec=losses.g_rec, g_total=losses.g_total)
        sums += [vals["d_loss"], vals["g_adv"], vals["g_rec"], vals["g_total"]]
    state.epoch += 1
    means = sums / n_iter
    return EpochStats(state.epoch, n_iter, *map(float, means))


def train_epoch(state: TrainState, images, constraints) -> EpochStats:
    """One pass of the plain loop over ``len(images) // batch_size`` iterations.

    ``images`` is a channel-first tensor; ``constraints`` is the
    ``(values, mask)`` pair from :func:`pixgan.constraints.stack_maps`, drawn
    with replacement.
    """
    if state.cfg.pac != 1:
        raise ValueError("train_epoch needs pac = 1; use train_epoch_pac")
    return _run_epoch(state, images, constraints, packed=False)


def train_epoch_pac(state: TrainState, images, constraints) -> EpochStats:
    """Packed loop: D sees pairs of real images vs pairs ``G(y, z_a), G(y, z_b)``."""
    if state.cfg.pac != 2 or getattr(state.discriminator, "pack", 2) != 2:
        raise ValueError("train_epoch_pac needs pac = 2 and a discriminator built with pack = 2")
    return _run_epoch(state, images, constraints, packed=True)


def run_epoch(state, images, constraints) -> EpochStats:
    fn = train_epoch_pac if state.cfg.pac == 2 else train_epoch
    return fn(state, images, constraints)


# -- checkpoints ----------------------------------------------------------------

def persist_state(state: TrainState, path) -> Path:
    """Write ``path/epoch_<N>/`` and point ``path/latest`` at it."""
    root = Path(path)
    target = root / f"epoch_{state.epoch}"
    target.mkdir(parents=True, exist_ok=True)
    G, D = state.generator, state.discriminator
    torch.save(G.state_dict(), target / "generator.pt")
    torch.save(D.state_dict(), target / "discriminator.pt")
    torch.save({"g": state.opt_g.state_dict(), "d": state.opt_d.state_dict()},
               target / "optimizers.pt")
    torch.save(state.rng.get_state(), target / "rng.pt")
    (target / "history.json").write_text(state.history.to_json())
    (target / "train_config.txt").write_text(cfgio.dump(state.cfg))
    (target / "generator.arch").write_text(G.spec.text)
    (target / "discriminator.arch").write_text(D.spec.text)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "epoch": state.epoch,
        "image_shape": list(G.image_shape),
        "pack": D.pack,
        "conditional": D.conditional,
    }
    (target / "meta.json").write_text(json.dumps(meta, sort_keys=True))
    (root / "latest").write_text(target.name + "\n")
    return target


def resolve_checkpoint(path) -> Path:
    path = Path(path)
    if path.name == "latest" and path.is_file():
        path = path.parent
    if (path / "latest").is_file():
        path = path / (path / "latest").read_text().strip()
    if not (path / "meta.json").is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    return path


def restore_state(path) -> TrainState:
    """Rebuild a :class:`TrainState` from a checkpoint directory (or its parent)."""
    path = resolve_checkpoint(path)
    try:
        meta = json.loads((path / "meta.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint metadata in {path}: {exc}") from exc
    version = meta.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint {path} has format version {version}, "
                              f"this build reads version {CHECKPOINT_VERSION}")
    try:
        cfg = cfgio.load(TrainConfig, path / "train_config.txt")
        g_spec = parse_spec((path / "generator.arch").read_text())
        d_spec = parse_spec((path / "discriminator.arch").read_text())
        state = new_state(g_spec, d_spec, cfg, tuple(meta["image_shape"]))
        state.generator.load_state_dict(torch.load(path / "generator.pt"))
        state.discriminator.load_state_dict(torch.load(path / "discriminator.pt"))
        opts = torch.load(path / "optimizers.pt")
        state.opt_g.load_state_dict(opts["g"])
        state.opt_d.load_state_dict(opts["d"])
        state.rng.set_state(torch.load(path / "rng.pt"))
        state.history = MetricsHistory.from_json((path / "history.json").read_text())
    except (OSError, RuntimeError, KeyError, ValueError, EOFError,
            pickle.UnpicklingError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path} (format version {version}): {exc}") \
            from exc
    state.epoch = meta["epoch"]
    return state


def parameter_checksum(module: torch.nn.Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def stats_dict(stats: EpochStats) -> dict:
    return asdict(stats)
