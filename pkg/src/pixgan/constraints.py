"""Constraint maps: sparse known pixel values plus their spatial mask.

Images are ``(height, width, channels)`` float arrays in ``[-1, 1]``. A
constraint map stores the known values in the same layout (zero wherever the
mask is off) and a ``(height, width)`` binary mask. All channels of a masked
location are constrained together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# default guard for the "very few pixels" regime; maps denser than this are
# rejected by ``ConstraintMap.check_sparse`` (sampling itself allows any density)
SPARSE_DENSITY_LIMIT = 0.05


class InvalidInputError(ValueError):
    """Raised for malformed images, maps or shape mismatches."""


def as_image(x, name: str = "image") -> np.ndarray:
    """Validate an image array and return it as float64 ``(n, p, c)``."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise InvalidInputError(f"{name} must have shape (n, p, c), got {arr.shape}")
    n, p, c = arr.shape
    if n < 1 or p < 1:
        raise InvalidInputError(f"{name} is degenerate: {arr.shape}")
    if c not in (1, 3):
        raise InvalidInputError(f"{name} must have 1 or 3 channels, got {c}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    if arr.min() < -1.0 or arr.max() > 1.0:
        raise InvalidInputError(f"{name} values must lie in [-1, 1]")
    return arr


@dataclass(frozen=True, eq=False)
class ConstraintMap:
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = as_image(self.values, "constraint values")
        mask = np.asarray(self.mask)
        if mask.shape != values.shape[:2]:
            raise InvalidInputError(
                f"mask shape {mask.shape} does not match values {values.shape[:2]}"
            )
        if not np.all((mask == 0) | (mask == 1)):
            raise InvalidInputError("mask must be binary")
        mask = mask.astype(bool)
        if np.any(values[~mask] != 0):
            raise InvalidInputError("values must be exactly 0 at unmasked locations")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def empty(cls, shape) -> "ConstraintMap":
        n, p, c = shape
        return cls(np.zeros((n, p, c)), np.zeros((n, p), dtype=bool))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def density(self) -> float:
        n, p, _ = self.shape
        return self.count / (n * p)

    @property
    def dense_mask(self) -> np.ndarray:
        """The mask broadcast over channels, i.e. M(y) as a float array."""
        return np.broadcast_to(self.mask[..., None], self.shape).astype(np.float64)

    def locations(self) -> np.ndarray:
        """Masked ``(row, col)`` pairs in row-major order."""
        return np.argwhere(self.mask)

    def check_sparse(self, max_density: float = SPARSE_DENSITY_LIMIT) -> None:
        if self.density > max_density:
            raise InvalidInputError(
                f"constraint density {self.density:.4f} exceeds the sparse limit {max_density}"
            )

    def __eq__(self, other):
        if not isinstance(other, ConstraintMap):
            return NotImplemented
        return np.array_equal(self.mask, other.mask) and np.array_equal(
            self.values, other.values
        )


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise InvalidInputError(f"noise sigma must be >= 0, got {self.sigma}")


def constraint_count(density: float, n: int, p: int) -> int:
    return max(1, int(round(density * n * p)))


def sample_constraint_map(image, density: float, rng: np.random.Generator) -> ConstraintMap:
    """Pick ``max(1, round(density*n*p))`` locations uniformly without replacement."""
    img = as_image(image)
    n, p, _ = img.shape
    if not 0 < density <= 1:
        raise InvalidInputError(f"density must lie in (0, 1], got {density}")
    k = constraint_count(density, n, p)
    flat = rng.choice(n * p, size=k, replace=False)
    mask = np.zeros(n * p, dtype=bool)
    mask[flat] = True
    mask = mask.reshape(n, p)
    values = np.where(mask[..., None], img, 0.0)
    return ConstraintMap(values, mask)


def apply_mask(cmap: ConstraintMap, image) -> np.ndarray:
    """Return ``M(y) * image``: image values at masked locations, 0 elsewhere."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.shape != cmap.shape:
        raise InvalidInputError(f"image shape {img.shape} does not match map {cmap.shape}")
    return np.where(cmap.mask[..., None], img, 0.0)


def add_measurement_noise(cmap: ConstraintMap, noise: NoiseSpec) -> ConstraintMap:
    """Add i.i.d. N(0, sigma^2) to the masked values, clipped back into [-1, 1]."""
    if noise.sigma == 0:
        return cmap
    rng = np.random.default_rng(noise.seed)
    eps = rng.normal(0.0, noise.sigma, size=cmap.shape)
    noisy = np.clip(cmap.values + eps, -1.0, 1.0)
    return ConstraintMap(np.where(cmap.mask[..., None], noisy, 0.0), cmap.mask)


def satisfied_fraction(cmap: ConstraintMap, image, eps: float = 0.1):
    """Fraction of masked locations whose per-channel mean squared error is < eps.

    Returns ``(fraction, flags)`` with one boolean flag per masked location,
    ordered as ``cmap.locations()``.
    """
    if not eps > 0:
        raise InvalidInputError("eps must be positive")
    if cmap.count == 0:
        raise InvalidInputError("satisfied fraction is undefined for an empty map")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.shape != cmap.shape:
        raise InvalidInputError(f"image shape {img.shape} does not match map {cmap.shape}")
    err = ((img - cmap.values) ** 2).mean(axis=-1)[cmap.mask]
    flags = err < eps
    return float(flags.mean()), flags


def encode_for_generator(cmap: ConstraintMap) -> np.ndarray:
    """Stack values and mask into a ``(n, p, c + 1)`` conditioning tensor."""
    return np.concatenate([cmap.values, cmap.mask[..., None].astype(np.float64)], axis=-1)


def decode_conditioning(tensor) -> ConstraintMap:
    arr = np.asarray(tensor, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[-1] not in (2, 4):
        raise InvalidInputError(f"conditioning tensor must be (n, p, c+1), got {arr.shape}")
    return ConstraintMap(arr[..., :-1], arr[..., -1])


def stack_maps(maps, dtype=None):
    """Batch maps into channel-first tensors ``values (B, c, n, p)`` and ``mask (B, 1, n, p)``."""
    import torch

    dtype = dtype or torch.get_default_dtype()
    values = np.stack([m.values.transpose(2, 0, 1) for m in maps])
    mask = np.stack([m.mask[None].astype(np.float64) for m in maps])
    return torch.as_tensor(values, dtype=dtype), torch.as_tensor(mask, dtype=dtype)


def conditioning_batch(values, mask):
    """Channel-first counterpart of :func:`encode_for_generator` for batched tensors."""
    import torch

    return torch.cat([values, mask], dim=1)
