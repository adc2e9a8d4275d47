"""Adversarial and reconstruction losses.

All reductions are means over the batch (and over the spatial grid for
patch discriminators), so ``lam`` does not depend on the batch size. The
discriminator loss is returned negated, ready for gradient descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

PROB_EPS = 1e-7
BATCH_REDUCTION = "mean"

LOSS_VARIANTS = ("saturating", "non-saturating")


@dataclass
class LossBreakdown:
    d_loss: float
    g_adv: float
    g_rec: float
    g_total: float
    lam: float
    meta: dict = field(default_factory=lambda: {"batch_reduction": BATCH_REDUCTION})

    def as_floats(self) -> "LossBreakdown":
        def f(v):
            return float(v.detach()) if torch.is_tensor(v) else float(v)

        return LossBreakdown(f(self.d_loss), f(self.g_adv), f(self.g_rec), f(self.g_total),
                             float(self.lam), dict(self.meta))


@dataclass(frozen=True)
class LatentSpec:
    """Shape ``(channels, height, width)`` of z and its sampling distribution."""

    shape: tuple
    distribution: str = "uniform"

    def __post_init__(self):
        if self.distribution not in ("uniform", "normal"):
            raise ValueError(f"unknown latent distribution {self.distribution!r}")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    def sample(self, batch: int, generator: torch.Generator | None = None,
               dtype=None) -> torch.Tensor:
        size = (batch, *self.shape)
        dtype = dtype or torch.get_default_dtype()
        if self.distribution == "uniform":
            return torch.rand(size, generator=generator, dtype=dtype) * 2 - 1
        return torch.randn(size, generator=generator, dtype=dtype)


def _probs(p) -> torch.Tensor:
    p = torch.as_tensor(p)
    if p.numel() == 0:
        raise ValueError("empty batch")
    return p.clamp(PROB_EPS, 1 - PROB_EPS)


def discriminator_loss(d_real, d_fake) -> torch.Tensor:
    """``-(mean log D(x) + mean log(1 - D(G(y, z))))``."""
    d_real, d_fake = _probs(d_real), _probs(d_fake)
    return -(torch.log(d_real).mean() + torch.log1p(-d_fake).mean())


def generator_adversarial_loss(d_fake, variant: str = "saturating") -> torch.Tensor:
    d_fake = _probs(d_fake)
    if variant == "saturating":
        return torch.log1p(-d_fake).mean()
    if variant == "non-saturating":
        return -torch.log(d_fake).mean()
    raise ValueError(f"unknown loss variant {variant!r}")


def reconstruction_loss(values, mask, generated) -> torch.Tensor:
    """Squared Frobenius norm ``||y - M(y) * G||^2`` per sample, averaged over the batch.

    Tensors are channel-first with a leading batch dimension; ``mask`` has a
    single channel and is broadcast over the image channels.
    """
    values = torch.as_tensor(values)
    generated = torch.as_tensor(generated)
    mask = torch.as_tensor(mask, dtype=generated.dtype)
    if values.shape != generated.shape:
        raise ValueError(f"shape mismatch: values {tuple(values.shape)} vs generated "
                         f"{tuple(generated.shape)}")
    if (mask.shape[0] != values.shape[0] or mask.shape[2:] != values.shape[2:]
            or mask.shape[1] not in (1, values.shape[1])):
        raise ValueError(f"mask shape {tuple(mask.shape)} incompatible with {tuple(values.shape)}")
    resid = values - mask * generated
    return resid.pow(2).flatten(1).sum(dim=1).mean()


def combined_generator_loss(g_adv, g_rec, lam: float, d_loss=math.nan) -> LossBreakdown:
    """Compose ``g_adv + lam * g_rec``; works on floats and on tensors alike."""
    if not lam >= 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return LossBreakdown(d_loss=d_loss, g_adv=g_adv, g_rec=g_rec,
                         g_total=g_adv + lam * g_rec, lam=lam)


def cgan_losses(d_real_cond, d_fake_cond, variant: str = "saturating"):
    """Losses for a discriminator that also sees the constraint map.

    Same functional form as the unconditional losses; the conditioning lives
    entirely in how the discriminator inputs were built.
    """
    return (discriminator_loss(d_real_cond, d_fake_cond),
            generator_adversarial_loss(d_fake_cond, variant))
