"""HOG and LBP texture descriptors and the chi-squared histogram distance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LUMA = np.array([0.299, 0.587, 0.114])
CHI2_EPS = 1e-10


@dataclass(frozen=True)
class HistogramDescriptor:
    counts: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def normalized(self) -> np.ndarray:
        total = self.counts.sum()
        return self.counts / total if total > 0 else self.counts.astype(np.float64)

    def __len__(self):
        return len(self.counts)


def grayscale(image) -> np.ndarray:
    """Luminance for 3-channel images; single-channel images are squeezed."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[-1] == 1:
        return img[..., 0]
    if img.shape[-1] == 3:
        return img @ LUMA
    raise ValueError(f"expected 1 or 3 channels, got shape {img.shape}")


def image_gradients(gray: np.ndarray):
    """Centred differences ``I[.., k+1] - I[.., k-1]``; zero on the border."""
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    gx[:, 1:-1] = gray[:, 2:] - gray[:, :-2]
    gy[1:-1, :] = gray[2:, :] - gray[:-2, :]
    return gx, gy


def hog_descriptor(image, cell_size: int = 8, n_bins: int = 9) -> HistogramDescriptor:
    """Per-cell histograms of unsigned gradient orientation weighted by magnitude.

    Each cell is L2-normalised on its own (one-cell blocks); a cell without
    any gradient contributes a uniform histogram. Rows/columns that do not
    fill a whole cell are dropped.
    """
    gray = grayscale(image)
    n, p = gray.shape
    if n < cell_size or p < cell_size:
        raise ValueError(f"image {gray.shape} smaller than one {cell_size}x{cell_size} cell")
    gx, gy = image_gradients(gray)
    mag = np.hypot(gx, gy)
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    bins = np.minimum((angle // (180.0 / n_bins)).astype(int), n_bins - 1)

    rows, cols = n // cell_size, p // cell_size
    mag = mag[: rows * cell_size, : cols * cell_size]
    bins = bins[: rows * cell_size, : cols * cell_size]
    cell_id = (np.arange(rows * cell_size)[:, None] // cell_size) * cols + (
        np.arange(cols * cell_size)[None, :] // cell_size
    )
    hist = np.zeros((rows * cols, n_bins))
    np.add.at(hist, (cell_id.ravel(), bins.ravel()), mag.ravel())

    norms = np.linalg.norm(hist, axis=1, keepdims=True)
    flat = norms[:, 0] == 0
    hist[flat] = 1.0
    norms[flat] = math.sqrt(n_bins)
    hist = hist / norms
    return HistogramDescriptor(hist.ravel(), {"kind": "hog", "cell_size": cell_size,
                                              "n_bins": n_bins, "cells": (rows, cols)})


def lbp_offsets(radius: int, n_points: int):
    """``(dy, dx)`` of the circular sampling points, counter-clockwise from the right."""
    theta = 2 * np.pi * np.arange(n_points) / n_points
    dy = np.round(-radius * np.sin(theta), 9)
    dx = np.round(radius * np.cos(theta), 9)
    return dy, dx


def lbp_codes(image, radius: int = 1, n_points: int | None = None) -> np.ndarray:
    """Circular LBP codes of the interior pixels (neighbour >= centre sets the bit)."""
    gray = grayscale(image)
    n_points = n_points or 8 * radius
    n, p = gray.shape
    if n <= 2 * radius or p <= 2 * radius:
        raise ValueError(f"image {gray.shape} too small for LBP radius {radius}")
    ii, jj = np.mgrid[radius:n - radius, radius:p - radius]
    center = gray[ii, jj]
    codes = np.zeros(center.shape, dtype=np.int64)
    for k, (dy, dx) in enumerate(zip(*lbp_offsets(radius, n_points))):
        y, x = ii + dy, jj + dx
        y0, x0 = np.floor(y).astype(int), np.floor(x).astype(int)
        ty, tx = y - y0, x - x0
        y1, x1 = np.minimum(y0 + 1, n - 1), np.minimum(x0 + 1, p - 1)
        # a + t*(b - a) keeps constant neighbourhoods exact
        top = gray[y0, x0] + tx * (gray[y0, x1] - gray[y0, x0])
        bottom = gray[y1, x0] + tx * (gray[y1, x1] - gray[y1, x0])
        val = top + ty * (bottom - top)
        codes |= (val >= center).astype(np.int64) << k
    return codes


def lbp_descriptor(image, radius: int = 1, n_points: int | None = None) -> HistogramDescriptor:
    if radius not in (1, 2):
        raise ValueError(f"LBP radius must be 1 or 2, got {radius}")
    n_points = n_points or 8 * radius
    codes = lbp_codes(image, radius, n_points)
    counts = np.bincount(codes.ravel(), minlength=2 ** n_points).astype(np.float64)
    return HistogramDescriptor(counts, {"kind": "lbp", "radius": radius, "n_points": n_points})


def mean_descriptor(descriptors) -> HistogramDescriptor:
    """Average of normalised histograms sharing one binning."""
    descriptors = list(descriptors)
    params = descriptors[0].params
    if any(d.params != params for d in descriptors):
        raise ValueError("descriptors use different binnings")
    return HistogramDescriptor(np.mean([d.normalized for d in descriptors], axis=0), params)


def chi2_distance(h1, h2) -> float:
    """``0.5 * sum (a - b)^2 / (a + b + 1e-10)`` over normalised histograms."""
    if isinstance(h1, HistogramDescriptor) and isinstance(h2, HistogramDescriptor):
        if h1.params != h2.params:
            raise ValueError("histograms use different binnings")
        a, b = h1.normalized, h2.normalized
    else:
        a, b = np.asarray(h1, dtype=np.float64), np.asarray(h2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"bin counts differ: {a.shape} vs {b.shape}")
    return float(0.5 * np.sum((a - b) ** 2 / (a + b + CHI2_EPS)))
