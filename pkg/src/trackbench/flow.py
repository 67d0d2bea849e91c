"""Batched pyramidal least-squares flow.

Tracks every feature simultaneously with an inverse-compositional
translation solve: per pyramid level, the template window and its
gradients come from the previous frame at the feature's position, and the
update d <- d + (G^T G)^-1 G^T r iterates until the step drops below the
convergence epsilon.  Template gradients are computed once per level, so
each iteration costs one warped resample of the next frame.

A track is lost when its full-resolution window leaves either image, the
gradient normal matrix is near-singular (min eigenvalue below
SINGULAR_EIG_PER_PIXEL per window pixel), an iteration step exceeds the
window radius (divergence), or the converged residual stays above
RESIDUAL_LIMIT gray levels per pixel.  Coarse levels skip refinement near
borders instead of failing, so border features are still trackable at
full resolution.
"""

from __future__ import annotations

import numpy as np

from .imageops import build_pyramid, sample_patches, window_offsets

SINGULAR_EIG_PER_PIXEL = 1e-4
RESIDUAL_LIMIT = 30.0  # mean absolute gray levels after convergence


def _in_bounds(points: np.ndarray, shape: tuple[int, int], margin: float) -> np.ndarray:
    h, w = shape
    return (
        (points[:, 0] >= margin)
        & (points[:, 0] <= w - 1 - margin)
        & (points[:, 1] >= margin)
        & (points[:, 1] <= h - 1 - margin)
    )


def _min_eigenvalue(h00: np.ndarray, h01: np.ndarray, h11: np.ndarray) -> np.ndarray:
    trace_half = 0.5 * (h00 + h11)
    radicand = trace_half * trace_half - (h00 * h11 - h01 * h01)
    return trace_half - np.sqrt(np.maximum(radicand, 0.0))


def track_flow(
    prev_image: np.ndarray,
    next_image: np.ndarray,
    points: np.ndarray,
    levels: int = 3,
    radius: int = 10,
    max_iterations: int = 30,
    epsilon: float = 0.01,
) -> tuple[np.ndarray, np.ndarray]:
    """Follow each (u, v) point from prev to next.

    Returns (new_points (N, 2), ok (N,)); rows with ok False are lost and
    their position row is meaningless.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(points)
    if n == 0:
        return points.copy(), np.zeros(0, dtype=bool)

    prev_pyr = build_pyramid(prev_image, levels)
    next_pyr = build_pyramid(next_image, levels)
    offsets = window_offsets(radius)
    ext = window_offsets(radius + 1)
    side = 2 * radius + 3
    n_pix = offsets.shape[0]
    eig_floor = SINGULAR_EIG_PER_PIXEL * n_pix

    lost = np.zeros(n, dtype=bool)
    disp = np.zeros((n, 2), dtype=np.float64)  # full-resolution displacement
    final_residual = np.full(n, np.inf)

    for level in range(levels - 1, -1, -1):
        scale = float(2**level)
        prev_lvl = prev_pyr[level]
        next_lvl = next_pyr[level]
        base = points / scale
        d = disp / scale
        finest = level == 0

        refinable = ~lost & _in_bounds(base, prev_lvl.shape, radius + 2)
        if finest:
            lost |= ~refinable
        idx = np.nonzero(refinable)[0]
        if len(idx) == 0:
            continue

        patch = sample_patches(prev_lvl, base[idx], ext).reshape(-1, side, side)
        template = patch[:, 1:-1, 1:-1].reshape(-1, n_pix)
        gx = (0.5 * (patch[:, 1:-1, 2:] - patch[:, 1:-1, :-2])).reshape(-1, n_pix)
        gy = (0.5 * (patch[:, 2:, 1:-1] - patch[:, :-2, 1:-1])).reshape(-1, n_pix)
        h00 = np.sum(gx * gx, axis=1)
        h01 = np.sum(gx * gy, axis=1)
        h11 = np.sum(gy * gy, axis=1)
        det = h00 * h11 - h01 * h01
        singular = _min_eigenvalue(h00, h01, h11) < eig_floor
        lost[idx[singular]] = True

        live = ~singular
        active = np.nonzero(live)[0]  # rows into idx-space
        for _ in range(max_iterations):
            if len(active) == 0:
                break
            rows = idx[active]
            q = base[rows] + d[rows]
            inb = _in_bounds(q, next_lvl.shape, radius)
            if finest:
                lost[rows[~inb]] = True
            active = active[inb]
            if len(active) == 0:
                break
            rows = idx[active]
            warped = sample_patches(next_lvl, base[rows] + d[rows], offsets)
            r = template[active] - warped
            b0 = np.sum(gx[active] * r, axis=1)
            b1 = np.sum(gy[active] * r, axis=1)
            inv_det = 1.0 / det[active]
            du = (h11[active] * b0 - h01[active] * b1) * inv_det
            dv = (h00[active] * b1 - h01[active] * b0) * inv_det
            d[rows, 0] += du
            d[rows, 1] += dv
            if finest:
                final_residual[rows] = np.mean(np.abs(r), axis=1)
            step = np.hypot(du, dv)
            diverged = step > radius
            lost[rows[diverged]] = True
            active = active[~diverged & (step >= epsilon)]

        disp[idx] = d[idx] * scale

    still = ~lost
    bad_residual = still & (final_residual > RESIDUAL_LIMIT)
    lost |= bad_residual
    new_points = points + disp
    ok = ~lost
    return new_points, ok
