"""Datasets, the unpaired constraint-set split, and file formats.

Constraint files (``PIXCON``) are ASCII::

    PIXCON 1
    n p c
    row col v1 [v2 v3]      # one line per masked location, row-major order

with values printed to 6 decimals. Manifests list ``id split role`` records,
one per line, where ``role`` is ``image`` or ``constraint``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constraints import ConstraintMap, InvalidInputError, as_image, sample_constraint_map

SPLITS = ("train", "validation", "test")
PIXCON_MAGIC = "PIXCON"
PIXCON_VERSION = 1


class ConstraintFileError(ValueError):
    pass


@dataclass
class DatasetSplit:
    images: dict
    image_ids: dict
    constraints: dict
    provenance: dict  # split -> source image id of each constraint map
    labels: dict = field(default_factory=dict)
    density: float = 0.005

    def manifest_records(self):
        for split in SPLITS:
            for i in self.image_ids.get(split, []):
                yield int(i), split, "image"
            for i in self.provenance.get(split, []):
                yield int(i), split, "constraint"


def to_unit_range(images) -> np.ndarray:
    """8-bit images map to ``x / 127.5 - 1``; float images are returned as-is."""
    arr = np.asarray(images)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 127.5 - 1.0
    return arr.astype(np.float64)


def split_with_constraint_sets(images, rng: np.random.Generator, density: float = 0.005,
                               ids=None, labels=None) -> DatasetSplit:
    """Turn a fifth of every split into constraint maps and drop their sources.

    ``images`` maps split names to ``(N, n, p, c)`` arrays. ``ids`` (same
    layout) defaults to a global running index. Per split, ``N // 5`` images
    are drawn without replacement, converted with ``sample_constraint_map``
    and removed from the image collection.
    """
    out = DatasetSplit({}, {}, {}, {}, {}, density)
    next_id = 0
    for split, coll in images.items():
        coll = np.asarray(coll, dtype=np.float64)
        if coll.ndim == 3:
            coll = coll[..., None]
        size = len(coll)
        if size < 5:
            raise InvalidInputError(f"split {split!r} has {size} images; need at least 5")
        split_ids = (np.asarray(ids[split]) if ids is not None
                     else np.arange(next_id, next_id + size))
        next_id += size
        n_maps = size // 5
        chosen = rng.choice(size, size=n_maps, replace=False)
        keep = np.setdiff1d(np.arange(size), chosen)
        out.constraints[split] = [sample_constraint_map(coll[i], density, rng) for i in chosen]
        out.provenance[split] = [int(split_ids[i]) for i in chosen]
        out.images[split] = coll[keep]
        out.image_ids[split] = [int(i) for i in split_ids[keep]]
        if labels is not None and split in labels:
            out.labels[split] = np.asarray(labels[split])[keep]
    return out


def carve_splits(images, n_validation: int, n_test: int, rng: np.random.Generator,
                 labels=None):
    """Random train/validation/test partition; validation is taken from what remains after test."""
    images = np.asarray(images)
    order = rng.permutation(len(images))
    test, rest = order[:n_test], order[n_test:]
    val, train = rest[:n_validation], rest[n_validation:]
    parts = {"train": train, "validation": val, "test": test}
    imgs = {k: images[v] for k, v in parts.items()}
    ids = {k: v for k, v in parts.items()}
    labs = None if labels is None else {k: np.asarray(labels)[v] for k, v in parts.items()}
    return imgs, ids, labs


def patch_offsets(source_shape, count: int, rng: np.random.Generator, patch: int = 160):
    """Uniformly random top-left corners ``(rows, cols)`` of ``count`` patches.

    Useful on its own for large collections, where patches are cut lazily as
    views of the source.
    """
    h, w = source_shape[:2]
    if h < patch or w < patch:
        raise InvalidInputError(f"source {h}x{w} smaller than the {patch}x{patch} patch")
    rows = rng.integers(0, h - patch + 1, size=count)
    cols = rng.integers(0, w - patch + 1, size=count)
    return rows, cols


def sample_texture_patches(source, count: int, rng: np.random.Generator,
                           patch: int = 160) -> np.ndarray:
    """Crop ``count`` patches at uniformly random top-left offsets."""
    src = to_unit_range(source)
    if src.ndim == 2:
        src = src[..., None]
    rows, cols = patch_offsets(src.shape, count, rng, patch)
    out = np.empty((count, patch, patch, src.shape[2]))
    for k, (r, c) in enumerate(zip(rows, cols)):
        out[k] = src[r:r + patch, c:c + patch]
    return np.clip(out, -1.0, 1.0)


# -- PIXCON constraint files -------------------------------------------------

def format_constraint_map(cmap: ConstraintMap) -> str:
    n, p, c = cmap.shape
    lines = [f"{PIXCON_MAGIC} {PIXCON_VERSION}", f"{n} {p} {c}"]
    for r, col in cmap.locations():
        vals = " ".join(f"{v:.6f}" for v in cmap.values[r, col])
        lines.append(f"{r} {col} {vals}")
    return "\n".join(lines) + "\n"


def write_constraint_file(cmap: ConstraintMap, path) -> None:
    Path(path).write_text(format_constraint_map(cmap))


def parse_constraint_map(text: str) -> ConstraintMap:
    lines = text.splitlines()
    if not lines or lines[0].split() != [PIXCON_MAGIC, str(PIXCON_VERSION)]:
        raise ConstraintFileError(f"line 1: expected '{PIXCON_MAGIC} {PIXCON_VERSION}'")
    try:
        n, p, c = (int(t) for t in lines[1].split())
    except (IndexError, ValueError):
        raise ConstraintFileError("line 2: expected 'n p c'") from None
    if n < 1 or p < 1 or c not in (1, 3):
        raise ConstraintFileError(f"line 2: invalid shape {n} {p} {c}")
    values = np.zeros((n, p, c))
    mask = np.zeros((n, p), dtype=bool)
    last = -1
    for lineno, line in enumerate(lines[2:], start=3):
        toks = line.split()
        if not toks:
            continue
        if len(toks) != 2 + c:
            raise ConstraintFileError(f"line {lineno}: expected {2 + c} fields, got {len(toks)}")
        try:
            r, col = int(toks[0]), int(toks[1])
            vals = [float(t) for t in toks[2:]]
        except ValueError:
            raise ConstraintFileError(f"line {lineno}: malformed row {line!r}") from None
        if not (0 <= r < n and 0 <= col < p):
            raise ConstraintFileError(f"line {lineno}: location ({r}, {col}) out of range")
        if any(not -1.0 <= v <= 1.0 for v in vals):
            raise ConstraintFileError(f"line {lineno}: value outside [-1, 1]")
        flat = r * p + col
        if flat <= last:
            raise ConstraintFileError(f"line {lineno}: locations must be unique and row-major")
        last = flat
        mask[r, col] = True
        values[r, col] = vals
    return ConstraintMap(values, mask)


def read_constraint_file(path) -> ConstraintMap:
    return parse_constraint_map(Path(path).read_text())


def write_manifest(split: DatasetSplit, path) -> None:
    with open(path, "w") as fh:
        for rec in split.manifest_records():
            fh.write("%d %s %s\n" % rec)


def read_manifest(path) -> list:
    out = []
    for line in Path(path).read_text().splitlines():
        i, split, role = line.split()
        out.append((int(i), split, role))
    return out


# -- image ingestion ----------------------------------------------------------

def load_images(path):
    """Load ``(images, labels)`` from ``.npy``/``.npz`` archives or a directory of PNGs.

    Returned images are float ``(N, n, p, c)`` in ``[-1, 1]``; labels may be None.
    """
    path = Path(path)
    labels = None
    if path.is_dir():
        from PIL import Image

        files = sorted(path.glob("*.png"))
        if not files:
            raise FileNotFoundError(f"no PNG files in {path}")
        arr = np.stack([np.asarray(Image.open(f)) for f in files])
    elif path.suffix == ".npz":
        with np.load(path) as z:
            arr = z["images"]
            labels = z["labels"] if "labels" in z else None
    else:
        arr = np.load(path)
    arr = to_unit_range(arr)
    if arr.ndim == 3:
        arr = arr[..., None]
    return np.clip(arr, -1.0, 1.0), labels


# -- synthetic datasets ---------------------------------------------------------

def make_shapes(count: int, size: int = 16, rng: np.random.Generator | None = None):
    """Grayscale squares (label 0) and discs (label 1) of random size and position.

    Background is -1 and the shape has a random brightness in [0.2, 1].
    """
    rng = rng or np.random.default_rng(0)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    images = np.full((count, size, size, 1), -1.0)
    labels = rng.integers(0, 2, size=count)
    for k in range(count):
        radius = rng.uniform(size * 0.18, size * 0.32)
        cy, cx = rng.uniform(radius, size - radius, size=2)
        level = rng.uniform(0.2, 1.0)
        if labels[k] == 0:
            inside = (np.abs(yy - cy) <= radius) & (np.abs(xx - cx) <= radius)
        else:
            inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
        images[k, inside, 0] = level
    return images, labels


def make_brick_texture(height: int, width: int, rng: np.random.Generator | None = None,
                       brick: tuple = (12, 28), mortar: int = 2) -> np.ndarray:
    """A colour brick-wall image in [-1, 1] with staggered courses and per-brick tint."""
    rng = rng or np.random.default_rng(0)
    bh, bw = brick
    img = np.empty((height, width, 3))
    img[:] = (0.55, 0.5, 0.45)  # mortar
    for row, top in enumerate(range(0, height, bh)):
        offset = (bw // 2) * (row % 2)
        for left in range(-offset, width, bw):
            tint = np.array([0.75, 0.28, 0.18]) + rng.normal(0, 0.06, size=3)
            r0, r1 = top + mortar // 2, min(top + bh - mortar // 2, height)
            c0, c1 = max(left + mortar // 2, 0), min(left + bw - mortar // 2, width)
            if r1 > r0 and c1 > c0:
                img[r0:r1, c0:c1] = tint
    img = img + rng.normal(0, 0.03, size=img.shape)
    return np.clip(img * 2 - 1, -1, 1)


def make_channel_facies(height: int, width: int, rng: np.random.Generator | None = None,
                        n_channels: int = 6, thickness: float = 3.0) -> np.ndarray:
    """Binary fluvial-like image: sinuous horizontal sand channels (1) in clay (-1)."""
    rng = rng or np.random.default_rng(0)
    xs = np.arange(width)
    yy = np.arange(height)[:, None]
    sand = np.zeros((height, width), dtype=bool)
    for _ in range(n_channels):
        base = rng.uniform(0, height)
        amp = rng.uniform(2, height / 6)
        period = rng.uniform(width / 3, width)
        phase = rng.uniform(0, 2 * np.pi)
        centre = base + amp * np.sin(2 * np.pi * xs / period + phase)
        half = rng.uniform(thickness * 0.6, thickness * 1.4)
        sand |= np.abs(yy - centre[None, :]) <= half
    return np.where(sand, 1.0, -1.0)[..., None]


def check_image_batch(images) -> np.ndarray:
    for k, img in enumerate(images):
        as_image(img, f"image {k}")
    return np.asarray(images, dtype=np.float64)
