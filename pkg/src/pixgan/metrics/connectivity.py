"""Connectivity function of binary facies images.

For a facies value, a direction and a lag, the connectivity is the fraction
of same-facies pixel pairs at that lag that lie in the same 4-connected
component. Images in ``[-1, 1]`` are binarised at 0 (``> 0`` is facies 1).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

DIRECTIONS = ("horizontal", "vertical")
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class ConnectivityCurve:
    facies: int
    direction: str
    probabilities: np.ndarray  # index 0 is lag 1
    empty: bool = False

    @property
    def lags(self) -> np.ndarray:
        return np.arange(1, len(self.probabilities) + 1)


def binarize(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[-1] != 1:
            raise ValueError("connectivity expects a single-channel image")
        img = img[..., 0]
    return (img > 0).astype(np.int8)


def connectivity_function(image, facies: int, direction: str = "horizontal",
                          max_lag: int = 64) -> ConnectivityCurve:
    if facies not in (0, 1):
        raise ValueError(f"facies must be 0 or 1, got {facies}")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    phase = binarize(image) == facies
    if direction == "vertical":
        phase = phase.T
    probs = np.full(max_lag, np.nan)
    if not phase.any():
        return ConnectivityCurve(facies, direction, probs, empty=True)
    labels, _ = ndimage.label(phase, structure=FOUR_CONNECTED)
    width = phase.shape[1]
    for lag in range(1, min(max_lag, width - 1) + 1):
        a, b = labels[:, :-lag], labels[:, lag:]
        pairs = (a > 0) & (b > 0)
        n_pairs = pairs.sum()
        if n_pairs:
            probs[lag - 1] = (a[pairs] == b[pairs]).sum() / n_pairs
    return ConnectivityCurve(facies, direction, probs)


def connectivity_curves(image, max_lag: int = 64) -> list:
    """Both facies in both directions."""
    return [connectivity_function(image, f, d, max_lag) for f in (0, 1) for d in DIRECTIONS]


def mean_curves(images, max_lag: int = 64) -> list:
    """Per (facies, direction), the NaN-aware mean curve over a set of images."""
    per_image = [connectivity_curves(img, max_lag) for img in images]
    out = []
    for k, template in enumerate(per_image[0]):
        stack = np.stack([curves[k].probabilities for curves in per_image])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN lags stay NaN
            mean = np.nanmean(stack, axis=0)
        out.append(ConnectivityCurve(template.facies, template.direction, mean,
                                     empty=bool(np.all(np.isnan(mean)))))
    return out


def write_curves_csv(curves, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["facies", "direction", "lag", "probability"])
        for curve in curves:
            for lag, prob in zip(curve.lags, curve.probabilities):
                writer.writerow([curve.facies, curve.direction, int(lag),
                                 "nan" if np.isnan(prob) else f"{prob:.6f}"])
