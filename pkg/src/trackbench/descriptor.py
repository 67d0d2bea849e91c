"""Fixed-scale upright gradient-histogram descriptors.

128-vector per feature: a 16x16 support window split into 4x4 spatial
cells, 8 gradient-orientation bins per cell, trilinear vote spreading,
L2 normalization, 0.2 clamp, renormalization.  No orientation assignment
and no scale pyramid: descriptors are captured once at feature birth and
the protocol only ever compares patches under small frame-to-frame motion.
A gradient-free (uniform) patch yields the all-zeros vector, which matches
nothing.
"""

from __future__ import annotations

import numpy as np

from .errors import WindowOutOfBounds
from .imageops import bilinear_sample

SUPPORT = 16  # pixels per side
GRID = 4  # spatial cells per side
ORIENT_BINS = 8
CLAMP = 0.2

# sample grid: 18x18 so central differences cover the 16x16 interior;
# offsets are relative to the feature position, samples sit between pixels
_SPAN = np.arange(SUPPORT + 2, dtype=np.float64) - (SUPPORT + 1) / 2.0
_MARGIN = _SPAN[-1] + 1.0  # bilinear needs one more pixel beyond the grid


def descriptor_margin() -> float:
    """Distance from the image border inside which no descriptor exists."""
    return _MARGIN


def compute_descriptors(image: np.ndarray, points: np.ndarray) -> np.ndarray:
    """(N, 128) descriptors; raises if any support window leaves the image."""
    image = np.asarray(image, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    h, w = image.shape
    n = len(points)
    if n == 0:
        return np.empty((0, GRID * GRID * ORIENT_BINS), dtype=np.float64)
    if (
        np.any(points[:, 0] < _MARGIN)
        or np.any(points[:, 0] > w - 1 - _MARGIN)
        or np.any(points[:, 1] < _MARGIN)
        or np.any(points[:, 1] > h - 1 - _MARGIN)
    ):
        raise WindowOutOfBounds("descriptor support window leaves the image")

    side = SUPPORT + 2
    u = points[:, 0][:, None, None] + _SPAN[None, None, :]
    v = points[:, 1][:, None, None] + _SPAN[None, :, None]
    patches = bilinear_sample(
        image,
        np.broadcast_to(u, (n, side, side)),
        np.broadcast_to(v, (n, side, side)),
    )

    gx = 0.5 * (patches[:, 1:-1, 2:] - patches[:, 1:-1, :-2])
    gy = 0.5 * (patches[:, 2:, 1:-1] - patches[:, :-2, 1:-1])
    magnitude = np.hypot(gx, gy).reshape(n, -1)
    orientation = np.arctan2(gy, gx).reshape(n, -1)  # [-pi, pi]

    # orientation vote split between the two nearest bins
    t = (orientation / (2.0 * np.pi)) * ORIENT_BINS  # [-4, 4]
    o0 = np.floor(t)
    of = t - o0
    bin0 = o0.astype(np.int64) % ORIENT_BINS
    bin1 = (bin0 + 1) % ORIENT_BINS

    # spatial vote split between the (up to) four nearest cells; cell
    # coordinates run -0.5 .. 3.5 over the 16x16 interior
    pix = np.arange(SUPPORT, dtype=np.float64)
    cell_coord = (pix + 0.5) / (SUPPORT / GRID) - 0.5
    c0 = np.floor(cell_coord)
    cf = cell_coord - c0
    c0 = c0.astype(np.int64)

    cell_y = np.repeat(np.arange(SUPPORT), SUPPORT)
    cell_x = np.tile(np.arange(SUPPORT), SUPPORT)
    length = GRID * GRID * ORIENT_BINS
    row_offset = (np.arange(n, dtype=np.int64) * length)[:, None]
    accum = np.zeros(n * length, dtype=np.float64)

    for ix, wx in ((c0[cell_x], 1.0 - cf[cell_x]), (c0[cell_x] + 1, cf[cell_x])):
        for iy, wy in ((c0[cell_y], 1.0 - cf[cell_y]), (c0[cell_y] + 1, cf[cell_y])):
            valid = (ix >= 0) & (ix < GRID) & (iy >= 0) & (iy < GRID)
            spatial_w = wx * wy * valid
            base = (iy.clip(0, GRID - 1) * GRID + ix.clip(0, GRID - 1)) * ORIENT_BINS
            for bins, ow in ((bin0, 1.0 - of), (bin1, of)):
                idx = (row_offset + base[None, :] + bins).ravel()
                votes = (magnitude * spatial_w[None, :] * ow).ravel()
                accum += np.bincount(idx, weights=votes, minlength=n * length)

    out = accum.reshape(n, length)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    nonzero = norms[:, 0] > 1e-12
    out[nonzero] /= norms[nonzero]
    np.clip(out, None, CLAMP, out=out)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    out[nonzero] /= norms[nonzero]
    return out


def compute_descriptor(image: np.ndarray, point) -> np.ndarray:
    """Single-feature convenience wrapper around compute_descriptors."""
    p = np.asarray(getattr(point, "as_array", lambda: point)(), dtype=np.float64)
    return compute_descriptors(image, p.reshape(1, 2))[0]


def match_mutual_nearest(
    track_descriptors: np.ndarray,
    candidate_descriptors: np.ndarray,
    threshold: float,
) -> np.ndarray:
    """Per-track candidate index, or -1.

    A pair matches when each is the other's nearest neighbor and the
    distance is at most the threshold.  Zero-norm descriptors never match.
    argmin ties resolve to the lowest index on both sides.
    """
    t = np.asarray(track_descriptors, dtype=np.float64)
    c = np.asarray(candidate_descriptors, dtype=np.float64)
    n_t = len(t)
    result = np.full(n_t, -1, dtype=np.int64)
    if n_t == 0 or len(c) == 0:
        return result
    sq = (
        np.sum(t * t, axis=1)[:, None]
        + np.sum(c * c, axis=1)[None, :]
        - 2.0 * (t @ c.T)
    )
    np.clip(sq, 0.0, None, out=sq)
    dist = np.sqrt(sq)
    best_c = np.argmin(dist, axis=1)
    best_t = np.argmin(dist, axis=0)
    rows = np.arange(n_t)
    mutual = best_t[best_c] == rows
    close = dist[rows, best_c] <= threshold
    live = (np.linalg.norm(t, axis=1) > 1e-12) & (
        np.linalg.norm(c[best_c], axis=1) > 1e-12
    )
    ok = mutual & close & live
    result[ok] = best_c[ok]
    return result
