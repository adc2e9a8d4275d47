"""Evaluation metrics: constraint MSE, FID, HOG/LBP distances, connectivity, diversity."""

from __future__ import annotations

import numpy as np
import torch

from ..constraints import ConstraintMap, encode_for_generator, stack_maps
from ..objectives import reconstruction_loss
from .connectivity import (ConnectivityCurve, connectivity_curves, connectivity_function,
                           mean_curves, write_curves_csv)
from .descriptors import (HistogramDescriptor, chi2_distance, grayscale, hog_descriptor,
                          lbp_codes, lbp_descriptor, mean_descriptor)
from .fid import (CallableExtractor, CNNClassifierExtractor, FeatureEmbedding,
                  RandomProjectionExtractor, embedding_from_features, extract_features, fid,
                  trace_sqrt_product)


def _as_batch(images) -> torch.Tensor:
    arr = np.stack([np.asarray(g, dtype=np.float64) for g in images])
    if arr.ndim == 3:
        arr = arr[..., None]
    return torch.from_numpy(arr.transpose(0, 3, 1, 2))


def constraint_mse(maps, generated) -> float:
    """``(1/L) sum_i ||y_i - M(y_i) * G_i||_F^2`` over aligned lists of maps and images."""
    maps, generated = list(maps), list(generated)
    if not maps:
        raise ValueError("constraint_mse needs at least one map")
    if len(maps) != len(generated):
        raise ValueError(f"{len(maps)} maps but {len(generated)} generated images")
    values, mask = stack_maps(maps, dtype=torch.float64)
    return float(reconstruction_loss(values, mask, _as_batch(generated)))


def constraint_mse_per_value(maps, generated) -> float:
    """Like :func:`constraint_mse`, with each map's error divided by its ``k * c`` values."""
    maps, generated = list(maps), list(generated)
    if not maps:
        raise ValueError("constraint_mse needs at least one map")
    errs = []
    for m, g in zip(maps, generated):
        sq = constraint_mse([m], [g])
        errs.append(sq / max(1, m.count * m.shape[2]))
    return float(np.mean(errs))


def _generate(G, cond: torch.Tensor, z) -> torch.Tensor:
    was_training = getattr(G, "training", False)
    if was_training:
        G.eval()
    try:
        with torch.no_grad():
            return G(cond, z)
    finally:
        if was_training:
            G.train()


def diversity_score(G, cmap: ConstraintMap, n_pairs: int, latent, rng=None) -> float:
    """Mean absolute difference between greyscaled ``G(y, z_a)`` and ``G(y, z_b)``.

    ``G`` maps a channel-first conditioning batch and a latent batch to images;
    ``rng`` is a ``torch.Generator`` or an integer seed. With ``latent=None``
    the generator is called without z.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if rng is None or isinstance(rng, int):
        rng = torch.Generator().manual_seed(rng or 0)
    cond = torch.from_numpy(encode_for_generator(cmap).transpose(2, 0, 1)).float()
    cond = cond.unsqueeze(0).expand(n_pairs, -1, -1, -1)
    za = latent.sample(n_pairs, rng) if latent is not None else None
    zb = latent.sample(n_pairs, rng) if latent is not None else None
    a = _generate(G, cond, za).double().permute(0, 2, 3, 1).numpy()
    b = _generate(G, cond, zb).double().permute(0, 2, 3, 1).numpy()
    diffs = [np.abs(grayscale(x) - grayscale(y)).mean() for x, y in zip(a, b)]
    return float(np.mean(diffs))


__all__ = [
    "CNNClassifierExtractor", "CallableExtractor", "ConnectivityCurve", "FeatureEmbedding",
    "HistogramDescriptor", "RandomProjectionExtractor", "chi2_distance", "connectivity_curves",
    "connectivity_function", "constraint_mse", "constraint_mse_per_value", "diversity_score",
    "embedding_from_features", "extract_features", "fid", "grayscale", "hog_descriptor",
    "lbp_codes", "lbp_descriptor", "mean_curves", "mean_descriptor", "trace_sqrt_product",
    "write_curves_csv",
]
