"""Segment-test corner detection.

A pixel is a corner when at least 9 contiguous pixels on the 16-pixel
Bresenham circle of radius 3 are all brighter than center + threshold or
all darker than center - threshold.  The corner score is the sum of
absolute center-to-ring differences over the whole ring; non-maximum
suppression keeps only the strongest corner within a Chebyshev radius,
and surviving peaks are refined to sub-pixel by quadratic interpolation
of the dense ring-SAD surface.  Everything is vectorized over the full
image, and all orderings are deterministic: ties break by lowest row,
then column.
"""

from __future__ import annotations

import numpy as np

# Bresenham circle, radius 3, clockwise from 12 o'clock; (du, dv), v down.
RING = np.array(
    [
        (0, -3), (1, -3), (2, -2), (3, -1),
        (3, 0), (3, 1), (2, 2), (1, 3),
        (0, 3), (-1, 3), (-2, 2), (-3, 1),
        (-3, 0), (-3, -1), (-2, -2), (-1, -3),
    ],
    dtype=np.int64,
)

ARC_LENGTH = 9
_RADIUS = 3


def _ring_views(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h, w = img.shape
    center = img[_RADIUS : h - _RADIUS, _RADIUS : w - _RADIUS]
    ring = np.empty((16,) + center.shape, dtype=np.int16)
    for i, (du, dv) in enumerate(RING):
        ring[i] = img[_RADIUS + dv : h - _RADIUS + dv, _RADIUS + du : w - _RADIUS + du]
    return center, ring


def segment_test_scores(image: np.ndarray, threshold: int) -> np.ndarray:
    """Score raster: SAD over the ring at corners, -1 elsewhere."""
    img = np.asarray(image, dtype=np.int16)
    h, w = img.shape
    scores = np.full((h, w), -1.0, dtype=np.float64)
    if h <= 2 * _RADIUS or w <= 2 * _RADIUS:
        return scores
    center, ring = _ring_views(img)
    brighter = ring > (center + threshold)[None]
    darker = ring < (center - threshold)[None]

    def has_arc(flags: np.ndarray) -> np.ndarray:
        wrapped = np.concatenate([flags, flags[: ARC_LENGTH - 1]], axis=0)
        hit = np.zeros(center.shape, dtype=bool)
        for start in range(16):
            run = wrapped[start]
            for j in range(1, ARC_LENGTH):
                run = run & wrapped[start + j]
            hit |= run
        return hit

    corner = has_arc(brighter) | has_arc(darker)
    sad = np.abs(ring - center[None]).sum(axis=0, dtype=np.int64)
    scores[_RADIUS : h - _RADIUS, _RADIUS : w - _RADIUS] = np.where(corner, sad, -1.0)
    return scores


def ring_sad(image: np.ndarray) -> np.ndarray:
    """Dense SAD-over-ring raster with no corner test, -1 on the border frame."""
    img = np.asarray(image, dtype=np.int16)
    h, w = img.shape
    out = np.full((h, w), -1.0, dtype=np.float64)
    if h <= 2 * _RADIUS or w <= 2 * _RADIUS:
        return out
    center, ring = _ring_views(img)
    out[_RADIUS : h - _RADIUS, _RADIUS : w - _RADIUS] = np.abs(
        ring - center[None]
    ).sum(axis=0, dtype=np.int64)
    return out


def refine_subpixel(corners: np.ndarray, surface: np.ndarray) -> np.ndarray:
    """Shift each integer peak by the vertex of a 1d quadratic per axis.

    Fits the parabola through the three surface samples around the peak,
    independently in u and v, and clamps the shift to half a pixel.  A
    flat or non-concave fit leaves the coordinate unchanged.
    """
    if len(corners) == 0:
        return corners
    us = corners[:, 0].astype(np.int64)
    vs = corners[:, 1].astype(np.int64)
    out = corners.astype(np.float64).copy()
    for axis, (du, dv) in enumerate(((1, 0), (0, 1))):
        lo = surface[vs - dv, us - du]
        mid = surface[vs, us]
        hi = surface[vs + dv, us + du]
        denom = lo - 2.0 * mid + hi
        ok = (denom < -1e-12) & (lo >= 0) & (hi >= 0)
        shift = np.where(ok, 0.5 * (lo - hi) / np.where(ok, denom, 1.0), 0.0)
        out[:, axis] += np.clip(shift, -0.5, 0.5)
    return out


def nonmax_suppress(scores: np.ndarray, radius: int) -> np.ndarray:
    """(N, 2) corner positions (u, v) ordered by score desc, then row, column.

    Two-stage: a separable sliding-window maximum prunes anything weaker
    than a neighbor, then a greedy pass over survivors enforces strict
    minimum spacing (handles equal-score plateaus deterministically).
    """
    window = 2 * radius + 1
    padded = np.pad(scores, radius, constant_values=-1.0)
    h, w = scores.shape
    rowmax = np.max(
        np.stack([padded[:, i : i + w] for i in range(window)], axis=0), axis=0
    )
    winmax = np.max(
        np.stack([rowmax[i : i + h, :] for i in range(window)], axis=0), axis=0
    )
    vs, us = np.nonzero((scores >= 0) & (scores == winmax))
    if len(vs) == 0:
        return np.empty((0, 2), dtype=np.float64)
    order = np.lexsort((us, vs, -scores[vs, us]))
    vs, us = vs[order], us[order]

    cell = max(radius, 1)
    occupied: dict[tuple[int, int], list[tuple[int, int]]] = {}
    keep_u: list[int] = []
    keep_v: list[int] = []
    for u, v in zip(us.tolist(), vs.tolist()):
        cu, cv = u // cell, v // cell
        clear = True
        for gu in range(cu - 1, cu + 2):
            for gv in range(cv - 1, cv + 2):
                for ou, ov in occupied.get((gu, gv), ()):
                    if abs(ou - u) <= radius and abs(ov - v) <= radius:
                        clear = False
                        break
                if not clear:
                    break
            if not clear:
                break
        if clear:
            occupied.setdefault((cu, cv), []).append((u, v))
            keep_u.append(u)
            keep_v.append(v)
    return np.stack(
        [np.array(keep_u, dtype=np.float64), np.array(keep_v, dtype=np.float64)], axis=1
    )


def detect_corners(
    image: np.ndarray,
    threshold: int,
    nms_radius: int = 5,
    mask: np.ndarray | None = None,
    limit: int | None = None,
) -> np.ndarray:
    """Detect corners, strongest first; ``mask`` suppresses occupied regions.

    Returns (N, 2) float (u, v) positions, refined to sub-pixel against
    the unmasked ring-SAD surface.  ``limit`` caps the count after
    suppression so callers can hold a feature-count band.
    """
    scores = segment_test_scores(image, threshold)
    if mask is not None:
        scores[np.asarray(mask, dtype=bool)] = -1.0
    corners = nonmax_suppress(scores, nms_radius)
    if limit is not None:
        corners = corners[:limit]
    return refine_subpixel(corners, ring_sad(image))
