"""Architecture catalog, network construction and PacGAN packing."""

from __future__ import annotations

import torch

from ..objectives import LatentSpec
from .nets import Discriminator, Generator
from .spec import (ArchSpec, ArchSpecError, LayerRow, catalog_names, infer_shapes, load_spec,
                   parse_spec, receptive_field)

# catalog key -> (generator spec, discriminator spec)
ARCHITECTURES = {
    "dcgan-fashion": ("dcgan-fashion-g", "dcgan-fashion-d"),
    "unetres-cifar": ("unetres-cifar-g", "unetres-cifar-d"),
    "unetres-celeba": ("unetres-celeba-g", "unetres-celeba-d"),
    "updil-texture": ("updil-texture-g", "patchgan-texture-d"),
    "upencdec-texture": ("upencdec-texture-g", "patchgan-texture-d"),
    "unet-texture": ("unet-texture-g", "patchgan-texture-d"),
    "res-texture": ("res-texture-g", "patchgan-texture-d"),
    "unetres-texture": ("unetres-texture-g", "patchgan-texture-d"),
    "dcgan16": ("dcgan16-g", "dcgan16-d"),
    "unetres32": ("unetres32-g", "patchgan32-d"),
}


def _spec(spec) -> ArchSpec:
    return spec if isinstance(spec, ArchSpec) else load_spec(spec)


def image_shape_of(spec) -> tuple:
    """``(n, p, c)`` produced by a generator spec."""
    spec = _spec(spec)
    last = spec.layers[-1]
    return (*last.shape, last.units)


def build_generator(spec, image_shape=None, latent=None, seed: int = 0,
                    raw_output: bool = False) -> Generator:
    """Build a generator; parameters are initialised from ``seed``."""
    spec = _spec(spec)
    if spec.role != "generator":
        raise ArchSpecError(f"{spec.name} is a {spec.role} spec")
    image_shape = tuple(image_shape or image_shape_of(spec))
    if tuple(spec.output_shape) != image_shape[:2] or spec.layers[-1].units != image_shape[2]:
        raise ArchSpecError(f"{spec.name} produces {image_shape_of(spec)}, "
                            f"not the requested {image_shape}")
    want = spec.latent_shape
    if latent is None and want is not None:
        latent = LatentSpec(want)
    if latent is not None and want is not None and tuple(latent.shape) != tuple(want):
        raise ArchSpecError(f"{spec.name} expects latent shape {want}, got {latent.shape}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return Generator(spec, image_shape, latent, raw_output=raw_output)


def build_discriminator(spec, image_shape, conditional: bool = False, pack: int = 1,
                        seed: int = 0) -> Discriminator:
    spec = _spec(spec)
    if spec.role != "discriminator":
        raise ArchSpecError(f"{spec.name} is a {spec.role} spec")
    if pack not in (1, 2):
        raise ValueError(f"pack must be 1 or 2, got {pack}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return Discriminator(spec, tuple(image_shape), conditional=conditional, pack=pack)


def pac_stack(batch_a: torch.Tensor, batch_b: torch.Tensor) -> torch.Tensor:
    """Concatenate two channel-first batches along channels, ``a`` first."""
    if batch_a.shape != batch_b.shape:
        raise ValueError(f"cannot pack batches of shapes {tuple(batch_a.shape)} "
                         f"and {tuple(batch_b.shape)}")
    return torch.cat([batch_a, batch_b], dim=1)


def pac_unstack(packed: torch.Tensor):
    c = packed.shape[1] // 2
    return packed[:, :c], packed[:, c:]


__all__ = [
    "ARCHITECTURES", "ArchSpec", "ArchSpecError", "Discriminator", "Generator", "LayerRow",
    "build_discriminator", "build_generator", "catalog_names", "image_shape_of",
    "infer_shapes", "load_spec", "pac_stack", "pac_unstack", "parse_spec", "receptive_field",
]
