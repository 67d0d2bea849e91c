"""Shared raster helpers: bilinear sampling, pyramids, gradients.

All samplers take (u, v) pixel coordinates with u horizontal and v vertical,
matching the geometry module.  Arrays are indexed [v, u].
"""

from __future__ import annotations

import numpy as np


def bilinear_sample(image: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample at fractional positions; callers must keep samples in bounds.

    Requires 0 <= u <= W-1 and 0 <= v <= H-1 (the top-left convention puts
    the last valid sample center at W-1, H-1).
    """
    image = np.asarray(image, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    h, w = image.shape
    u0 = np.clip(np.floor(u).astype(np.intp), 0, w - 2)
    v0 = np.clip(np.floor(v).astype(np.intp), 0, h - 2)
    fu = u - u0
    fv = v - v0
    top = image[v0, u0] * (1 - fu) + image[v0, u0 + 1] * fu
    bottom = image[v0 + 1, u0] * (1 - fu) + image[v0 + 1, u0 + 1] * fu
    return top * (1 - fv) + bottom * fv


def sample_patches(
    image: np.ndarray, centers: np.ndarray, offsets: np.ndarray
) -> np.ndarray:
    """Bilinear patches around each center: (N, K) for K offset samples."""
    centers = np.asarray(centers, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    u = centers[:, None, 0] + offsets[None, :, 0]
    v = centers[:, None, 1] + offsets[None, :, 1]
    return bilinear_sample(image, u, v)


def box_downsample(image: np.ndarray) -> np.ndarray:
    """Halve resolution by 2x2 averaging, truncating odd edges."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    h2, w2 = h // 2, w // 2
    view = image[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
    return view.mean(axis=(1, 3))


def build_pyramid(image: np.ndarray, levels: int) -> list[np.ndarray]:
    """Level 0 is the input (as float64); each level halves resolution."""
    pyramid = [np.asarray(image, dtype=np.float64)]
    for _ in range(levels - 1):
        pyramid.append(box_downsample(pyramid[-1]))
    return pyramid


def window_offsets(radius: int) -> np.ndarray:
    """(K, 2) integer (du, dv) grid covering a (2r+1)^2 square, row-major."""
    span = np.arange(-radius, radius + 1)
    dv, du = np.meshgrid(span, span, indexing="ij")
    return np.stack([du.ravel(), dv.ravel()], axis=1).astype(np.float64)
