"""Fundamental-matrix consensus gate for frame-to-frame correspondences.

Minimal samples of 8 pairs fit a normalized 8-point fundamental matrix;
consensus is counted with a first-order (Sampson-style) epipolar distance
in pixels.  The iteration budget adapts to the best inlier ratio seen so
far, N = ceil(log(1-p) / log(1-w^8)), capped.  The final labels come from
a refit on the best consensus set.  Fewer than 8 pairs cannot constrain
the model: every pair passes and the result is flagged degenerate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SAMPLE_SIZE = 8
ITERATION_CAP = 2000


@dataclass(frozen=True)
class GateResult:
    inliers: np.ndarray  # (N,) bool
    degenerate: bool
    iterations: int


def adaptive_iterations(
    p: float, inlier_ratio: float, sample_size: int = SAMPLE_SIZE, cap: int = ITERATION_CAP
) -> int:
    """Trials needed to draw one all-inlier sample with confidence p."""
    if not 0.0 < p < 1.0:
        raise ValueError("confidence p must be in (0, 1)")
    w = min(max(inlier_ratio, 0.0), 1.0)
    success = w**sample_size
    if success <= 0.0:
        return cap
    if success >= 1.0:
        return 1
    # log1p keeps the denominator nonzero when success underflows 1 ulp
    n = math.ceil(math.log(1.0 - p) / math.log1p(-success))
    return max(1, min(cap, n))


def _normalization(points: np.ndarray) -> np.ndarray | None:
    centroid = points.mean(axis=0)
    spread = np.mean(np.linalg.norm(points - centroid, axis=1))
    if spread < 1e-12:
        return None
    s = math.sqrt(2.0) / spread
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def fit_fundamental(prev: np.ndarray, nxt: np.ndarray) -> np.ndarray | None:
    """Normalized 8-point fit over >= 8 pairs; None when unconstrained."""
    prev = np.asarray(prev, dtype=np.float64)
    nxt = np.asarray(nxt, dtype=np.float64)
    if len(prev) < SAMPLE_SIZE:
        return None
    t1 = _normalization(prev)
    t2 = _normalization(nxt)
    if t1 is None or t2 is None:
        return None
    p1 = prev * t1[0, 0] + t1[:2, 2]
    p2 = nxt * t2[0, 0] + t2[:2, 2]
    x1, y1 = p1[:, 0], p1[:, 1]
    x2, y2 = p2[:, 0], p2[:, 1]
    a = np.stack(
        [x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, np.ones_like(x1)], axis=1
    )
    _, _, vt = np.linalg.svd(a)
    f = vt[-1].reshape(3, 3)
    # rank-2 projection
    u, s, vt = np.linalg.svd(f)
    f = (u * np.array([s[0], s[1], 0.0])) @ vt
    f = t2.T @ f @ t1
    if not np.all(np.isfinite(f)):
        return None
    norm = np.linalg.norm(f)
    if norm < 1e-15:
        return None
    return f / norm


def epipolar_distance(f: np.ndarray, prev: np.ndarray, nxt: np.ndarray) -> np.ndarray:
    """First-order epipolar distance per pair, in pixels."""
    prev = np.asarray(prev, dtype=np.float64)
    nxt = np.asarray(nxt, dtype=np.float64)
    ones = np.ones((len(prev), 1))
    h1 = np.concatenate([prev, ones], axis=1)
    h2 = np.concatenate([nxt, ones], axis=1)
    fx1 = h1 @ f.T  # rows: F @ x1
    ftx2 = h2 @ f
    err = np.sum(h2 * fx1, axis=1)
    grad_sq = fx1[:, 0] ** 2 + fx1[:, 1] ** 2 + ftx2[:, 0] ** 2 + ftx2[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.abs(err) / np.sqrt(grad_sq)
    d[~np.isfinite(d)] = np.inf
    return d


def ransac_gate(
    prev: np.ndarray,
    nxt: np.ndarray,
    threshold: float = 3.0,
    p: float = 0.995,
    rng: np.random.Generator | None = None,
    cap: int = ITERATION_CAP,
) -> GateResult:
    """Label each correspondence pair as consensus inlier or outlier."""
    prev = np.asarray(prev, dtype=np.float64).reshape(-1, 2)
    nxt = np.asarray(nxt, dtype=np.float64).reshape(-1, 2)
    if prev.shape != nxt.shape:
        raise ValueError("paired pixel lists must have equal length")
    n = len(prev)
    if n < SAMPLE_SIZE:
        return GateResult(np.ones(n, dtype=bool), degenerate=True, iterations=0)
    rng = rng or np.random.default_rng(0)

    best_inliers = np.zeros(n, dtype=bool)
    best_count = -1
    budget = cap
    i = 0
    while i < budget:
        i += 1
        sample = rng.choice(n, size=SAMPLE_SIZE, replace=False)
        f = fit_fundamental(prev[sample], nxt[sample])
        if f is None:
            continue
        inliers = epipolar_distance(f, prev, nxt) <= threshold
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
            budget = min(cap, adaptive_iterations(p, count / n, cap=cap))

    if best_count < SAMPLE_SIZE:
        # consensus never reached a constraining set; pass everything
        return GateResult(np.ones(n, dtype=bool), degenerate=True, iterations=i)
    refit = fit_fundamental(prev[best_inliers], nxt[best_inliers])
    if refit is not None:
        final = epipolar_distance(refit, prev, nxt) <= threshold
        if final.sum() >= SAMPLE_SIZE:
            best_inliers = final
    return GateResult(best_inliers, degenerate=False, iterations=i)
