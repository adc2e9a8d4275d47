"""Gaussian feature embeddings and the Frechet distance between them.

Feature extractors are plain callables mapping a batch of ``(n, p, c)``
images to a ``(N, d)`` array. Each carries a ``name`` so reports can state
which backend produced a score; scores are only comparable within one
backend.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


@dataclass(frozen=True)
class FeatureEmbedding:
    mu: np.ndarray
    sigma: np.ndarray
    n_samples: int

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if not np.allclose(sigma, sigma.T, atol=1e-8, rtol=0):
            raise ValueError("covariance must be symmetric")
        if sigma.size and np.linalg.eigvalsh(sigma).min() < -1e-8:
            raise ValueError("covariance must be positive semi-definite")
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=np.float64))
        object.__setattr__(self, "sigma", sigma)


def embedding_from_features(feats) -> FeatureEmbedding:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ValueError("need at least two feature vectors for a covariance")
    mu = feats.mean(axis=0)
    centered = feats - mu
    sigma = centered.T @ centered / (feats.shape[0] - 1)
    return FeatureEmbedding(mu, (sigma + sigma.T) / 2, feats.shape[0])


def extract_features(images, extractor) -> FeatureEmbedding:
    """Mean and unbiased covariance of ``extractor(images)``."""
    images = np.asarray(images, dtype=np.float64)
    if images.shape[0] < 2:
        raise ValueError("need at least two images for a covariance")
    return embedding_from_features(extractor(images))


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def trace_sqrt_product(sigma_a: np.ndarray, sigma_b: np.ndarray) -> float:
    """``Tr((A B)^(1/2))`` via the symmetric form ``A^(1/2) B A^(1/2)``."""
    ra = _psd_sqrt(sigma_a)
    m = ra @ sigma_b @ ra
    w = np.linalg.eigvalsh((m + m.T) / 2)
    # round-off leaves tiny negative eigenvalues on singular products
    w = np.clip(w, 0, None)
    return float(np.sqrt(w).sum())


def fid(a: FeatureEmbedding, b: FeatureEmbedding) -> float:
    if a.mu.shape != b.mu.shape or a.sigma.shape != b.sigma.shape:
        raise ValueError(f"embedding dimensions differ: {a.mu.shape} vs {b.mu.shape}")
    diff = a.mu - b.mu
    tr = np.trace(a.sigma) + np.trace(b.sigma) - 2 * trace_sqrt_product(a.sigma, b.sigma)
    return float(diff @ diff + tr)


def _to_batch(images) -> torch.Tensor:
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[..., None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


class RandomProjectionExtractor:
    """Fixed seeded random projection of the flattened image followed by tanh."""

    def __init__(self, dim: int = 16, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.name = f"random-projection(dim={dim},seed={seed})"
        self._weights = {}

    def __call__(self, images) -> np.ndarray:
        arr = np.asarray(images, dtype=np.float64)
        flat = arr.reshape(arr.shape[0], -1)
        d_in = flat.shape[1]
        if d_in not in self._weights:
            rng = np.random.default_rng(self.seed)
            self._weights[d_in] = rng.normal(0, 1 / np.sqrt(d_in), size=(d_in, self.dim))
        return np.tanh(flat @ self._weights[d_in])


class SmallCNN(nn.Module):
    def __init__(self, channels: int, n_classes: int, width: int = 16, feat_dim: int = 32):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, width, 3, padding=1), nn.ReLU(),
            nn.Conv2d(width, width * 2, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(width * 2, width * 2, 3, stride=2, padding=1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
            nn.Linear(width * 2, feat_dim), nn.ReLU(),
        )
        self.head = nn.Linear(feat_dim, n_classes)

    def forward(self, x):
        return self.head(self.body(x))


class CNNClassifierExtractor:
    """Penultimate-layer features of a small classifier trained on labelled images."""

    def __init__(self, images, labels, epochs: int = 5, seed: int = 0, batch_size: int = 64):
        images = np.asarray(images)
        labels = np.asarray(labels, dtype=np.int64)
        channels = 1 if images.ndim == 3 else images.shape[-1]
        n_classes = int(labels.max()) + 1
        g = torch.Generator().manual_seed(seed)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.model = SmallCNN(channels, n_classes)
        opt = torch.optim.Adam(self.model.parameters(), lr=1e-3)
        x, y = _to_batch(images), torch.from_numpy(labels)
        self.model.train()
        for _ in range(epochs):
            perm = torch.randperm(len(x), generator=g)
            for i in range(0, len(x), batch_size):
                idx = perm[i:i + batch_size]
                loss = nn.functional.cross_entropy(self.model(x[idx]), y[idx])
                opt.zero_grad()
                loss.backward()
                opt.step()
        self.model.eval()
        with torch.no_grad():
            self.accuracy = float((self.model(x).argmax(1) == y).float().mean())
        self.name = f"small-cnn(classes={n_classes},seed={seed})"

    def __call__(self, images) -> np.ndarray:
        with torch.no_grad():
            return self.model.body(_to_batch(images)).double().numpy()


class CallableExtractor:
    """Wrap a user function as a named backend."""

    def __init__(self, fn, name: str):
        self.fn = fn
        self.name = name

    def __call__(self, images):
        return np.asarray(self.fn(images), dtype=np.float64)
