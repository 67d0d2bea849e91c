"""Geometric ground truth for feature tracks.

A track is anchored to a single 3D point and judged against it for the
rest of its life: the anchor is reprojected through the known camera
poses, and the error at time t is the tracked position minus the
reprojection.  Two anchoring strategies are supported:

* depth at birth: back-project the track's first observation through the
  birth frame's depth map (bilinear, ignoring invalid samples);
* keyframe cloud: project a reference point cloud into its keyframe and
  associate the track's position there with the nearest projected point
  when it lies closer than 0.25 px (ties go to the lowest cloud index).

Anchors are world-frame points, so the reprojection at the anchoring
frame reproduces the anchoring observation and the error there is zero
by construction (depth anchoring) or bounded by the association gate
(cloud anchoring).

Per-scene percentile rejection trims tracks whose worst error magnitude
exceeds the nearest-rank percentile cutoff of the scene's population,
which keeps gross mistracks from drowning the error statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec, MissingStream, NoValidDepth
from .geometry import (
    MIN_DEPTH,
    backproject_pixels,
    inverse,
    project_points,
    transform_points,
)
from .sequence import SequenceBundle
from .tracking import FeatureTrack

ASSOCIATION_RADIUS = 0.25  # px, cloud-to-track gate at the keyframe


@dataclass
class GroundTruthTrack:
    """One track with its reprojected reference curve and error rows.

    Rows align with the track's observation frames.  ``valid`` is False
    where the anchor fell behind the camera; ``gated`` mirrors the
    track's outlier flags.  Error rows are NaN wherever invalid.
    """

    track_id: int
    birth_frame: int
    observed: np.ndarray
    gt: np.ndarray
    err: np.ndarray
    valid: np.ndarray
    gated: np.ndarray
    anchor: np.ndarray

    def __len__(self) -> int:
        return len(self.observed)

    @property
    def frames(self) -> range:
        return range(self.birth_frame, self.birth_frame + len(self.observed))

    @property
    def usable(self) -> np.ndarray:
        return self.valid & ~self.gated

    def max_error(self) -> float | None:
        use = self.usable
        if not np.any(use):
            return None
        return float(np.max(np.hypot(self.err[use, 0], self.err[use, 1])))


def bilinear_depth(depth: np.ndarray, u: float, v: float) -> float:
    """Depth at a subpixel position, ignoring non-finite or <= 0 samples.

    The four neighbor weights are renormalized over the valid samples, so
    a feature on a depth discontinuity is anchored by the surviving
    neighbors alone.  Raises NoValidDepth when all four are unusable.
    """
    h, w = depth.shape
    u0 = min(max(int(np.floor(u)), 0), w - 2)
    v0 = min(max(int(np.floor(v)), 0), h - 2)
    fu = u - u0
    fv = v - v0
    samples = depth[v0 : v0 + 2, u0 : u0 + 2].astype(np.float64)
    weights = np.array(
        [
            [(1 - fu) * (1 - fv), fu * (1 - fv)],
            [(1 - fu) * fv, fu * fv],
        ]
    )
    ok = np.isfinite(samples) & (samples > 0)
    total = weights[ok].sum()
    if total <= 0.0:
        raise NoValidDepth(f"no valid depth around ({u:.2f}, {v:.2f})")
    return float((samples[ok] * weights[ok]).sum() / total)


def anchor_from_depth(seq: SequenceBundle, track: FeatureTrack) -> np.ndarray:
    """World-frame anchor from the birth observation and birth-frame depth."""
    frame = seq.frames[track.birth_frame]
    if frame.depth is None:
        raise MissingStream(f"frame {frame.index} has no depth")
    u, v = track.us[0], track.vs[0]
    z = bilinear_depth(frame.depth, u, v)
    cam = backproject_pixels(seq.intrinsics, np.array([[u, v]]), np.array([z]))
    return transform_points(frame.pose, cam)[0]


def project_cloud(seq: SequenceBundle) -> np.ndarray:
    """Keyframe-cloud pixels, NaN rows for points behind the camera."""
    if seq.cloud is None:
        raise MissingStream("sequence has no keyframe cloud")
    points = seq.cloud.points
    pixels = np.full((len(points), 2), np.nan)
    front = points[:, 2] > MIN_DEPTH
    if np.any(front):
        pixels[front] = project_points(seq.intrinsics, points[front])
    return pixels


def anchor_from_cloud(
    seq: SequenceBundle,
    track: FeatureTrack,
    cloud_pixels: np.ndarray | None = None,
) -> tuple[np.ndarray, int] | None:
    """Associate a track with the nearest projected cloud point.

    Returns (world anchor, cloud index), or None when the track does not
    span the keyframe or no projection lies within the association gate.
    ``cloud_pixels`` can carry a precomputed project_cloud result.
    """
    if seq.cloud is None:
        raise MissingStream("sequence has no keyframe cloud")
    kf = seq.cloud.keyframe
    i = kf - track.birth_frame
    if not 0 <= i < len(track.us):
        return None
    if cloud_pixels is None:
        cloud_pixels = project_cloud(seq)
    du = cloud_pixels[:, 0] - track.us[i]
    dv = cloud_pixels[:, 1] - track.vs[i]
    with np.errstate(invalid="ignore"):
        dist = np.hypot(du, dv)
    dist = np.where(np.isnan(dist), np.inf, dist)
    index = int(np.argmin(dist))  # argmin keeps the lowest index on ties
    if dist[index] >= ASSOCIATION_RADIUS:
        return None
    world = transform_points(seq.frames[kf].pose, seq.cloud.points[index][None, :])[0]
    return world, index


def reproject_track(
    seq: SequenceBundle, track: FeatureTrack, anchor: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reproject a world anchor over the track's frames.

    Returns (gt (N, 2), valid (N,)); rows are NaN and invalid where the
    anchor falls behind the camera.
    """
    n = len(track.us)
    gt = np.full((n, 2), np.nan)
    valid = np.zeros(n, dtype=bool)
    for row, frame_index in enumerate(track.frames):
        pose = seq.frames[frame_index].pose
        cam = transform_points(inverse(pose), anchor[None, :])[0]
        if cam[2] > MIN_DEPTH:
            gt[row] = project_points(seq.intrinsics, cam[None, :])[0]
            valid[row] = True
    return gt, valid


def compute_errors(observed: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    """Tracked minus reference positions, row for row."""
    observed = np.asarray(observed, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if observed.shape != predicted.shape:
        raise ValueError("observed and predicted shapes differ")
    return observed - predicted


def annotate_tracks(
    seq: SequenceBundle, tracks: list[FeatureTrack], anchor: str = "depth"
) -> list[GroundTruthTrack]:
    """Anchor and reproject every track that admits an anchor.

    Tracks that cannot be anchored (no valid depth at birth, or no cloud
    association at the keyframe) are silently left out.
    """
    if anchor not in ("depth", "cloud"):
        raise InvalidSpec(f"unknown anchoring {anchor!r}")
    cloud_pixels = project_cloud(seq) if anchor == "cloud" else None
    out = []
    for track in tracks:
        if anchor == "depth":
            try:
                point = anchor_from_depth(seq, track)
            except NoValidDepth:
                continue
        else:
            hit = anchor_from_cloud(seq, track, cloud_pixels)
            if hit is None:
                continue
            point = hit[0]
        gt, valid = reproject_track(seq, track, point)
        observed = track.positions()
        err = np.full_like(gt, np.nan)
        err[valid] = compute_errors(observed[valid], gt[valid])
        out.append(
            GroundTruthTrack(
                track_id=track.id,
                birth_frame=track.birth_frame,
                observed=observed,
                gt=gt,
                err=err,
                valid=valid,
                gated=np.array(track.gated_out, dtype=bool),
                anchor=point,
            )
        )
    return out


def percentile_cutoff(maxima: np.ndarray, q: float) -> float:
    """Nearest-rank percentile: the ceil(q/100 * n)-th smallest value."""
    if not 0.0 < q <= 100.0:
        raise InvalidSpec(f"percentile {q} outside (0, 100]")
    n = len(maxima)
    rank = max(1, math.ceil(q / 100.0 * n))
    return float(np.sort(maxima)[rank - 1])


def percentile_reject(
    gt_tracks: list[GroundTruthTrack], q: float = 90.0
) -> list[GroundTruthTrack]:
    """Drop tracks whose worst usable error strictly exceeds the cutoff.

    The cutoff is the nearest-rank q-th percentile of the per-track
    maximum error magnitudes across the given population (one scene).
    Tracks without a single usable observation are dropped as well.
    """
    scored = [(t, t.max_error()) for t in gt_tracks]
    scored = [(t, m) for t, m in scored if m is not None]
    if not scored:
        return []
    maxima = np.array([m for _, m in scored])
    cutoff = percentile_cutoff(maxima, q)
    return [t for t, m in scored if m <= cutoff]


def write_groundtruth_dump(gt_tracks: list[GroundTruthTrack], path) -> None:
    """CSV rows of reference positions and errors, one per observation."""
    with open(path, "w", newline="") as fh:
        fh.write("track_id,frame,gt_u,gt_v,err_u,err_v,valid\n")
        for t in gt_tracks:
            for row, frame in enumerate(t.frames):
                values = (
                    t.gt[row, 0],
                    t.gt[row, 1],
                    t.err[row, 0],
                    t.err[row, 1],
                )
                text = ",".join(repr(float(v)) for v in values)
                fh.write(f"{t.track_id},{frame},{text},{int(t.valid[row])}\n")
