"""Track lifecycle: detection band, continuation, consensus gate, refill.

Two tracker families share one lifecycle.  The differential tracker
follows features frame-to-frame with pyramidal least-squares flow; the
correspondence tracker re-detects corners every frame and matches each
track's birth descriptor (never updated) against the new candidates.
Either way a feature missed once is dead: there is no re-acquisition
grace period, because that is the measured behavior this bench reproduces.

Continuations are gated per frame by fundamental-matrix consensus.  A
gated-out continuation is recorded (flagged) so dumps show where RANSAC
fired, but it terminates the track and does not count toward lifetime.

Frame attribution bookkeeping: f0 = gated-in continuations, f1 = gated-out
continuations, f2 = newly created tracks, F_prev = live count in the
previous frame.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .descriptor import compute_descriptors, descriptor_margin, match_mutual_nearest
from .detect import detect_corners
from .flow import track_flow
from .ransac import ransac_gate
from .seeding import derive_rng
from .sequence import Frame, SequenceBundle

DIFFERENTIAL = "differential"
CORRESPONDENCE = "correspondence"


@dataclass(frozen=True)
class TrackerConfig:
    kind: str = DIFFERENTIAL
    min_features: int = 1000
    max_features: int = 1200
    detector_threshold: int = 20
    nms_radius: int = 5
    pyramid_levels: int = 3
    window_radius: int = 10
    max_iterations: int = 30
    epsilon: float = 0.01
    match_threshold: float = 0.35
    exclusion_radius: float = 10.0
    ransac_p: float = 0.995
    ransac_threshold: float = 3.0

    def __post_init__(self) -> None:
        if self.kind not in (DIFFERENTIAL, CORRESPONDENCE):
            raise ValueError(f"unknown tracker kind {self.kind!r}")
        if not 0 < self.min_features <= self.max_features:
            raise ValueError("feature band must satisfy 0 < min <= max")
        if self.ransac_threshold <= 0:
            raise ValueError("ransac threshold must be positive")
        if not 0.0 < self.ransac_p < 1.0:
            raise ValueError("ransac confidence must be in (0, 1)")

    def config_hash(self) -> str:
        payload = {f.name: getattr(self, f.name) for f in fields(self)}
        text = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    @property
    def border_margin(self) -> int:
        # new features must fit both the flow window and the descriptor
        return max(self.window_radius + 2, int(np.ceil(descriptor_margin())))


@dataclass(eq=False)
class FeatureTrack:
    """One feature's observation history; positions are sub-pixel (u, v)."""

    id: int
    birth_frame: int
    us: list[float] = field(default_factory=list)
    vs: list[float] = field(default_factory=list)
    gated_out: list[bool] = field(default_factory=list)
    descriptor: np.ndarray | None = None
    alive: bool = True

    def append(self, u: float, v: float, gated_out: bool = False) -> None:
        self.us.append(float(u))
        self.vs.append(float(v))
        self.gated_out.append(bool(gated_out))

    @property
    def last_position(self) -> tuple[float, float]:
        return self.us[-1], self.vs[-1]

    @property
    def frames(self) -> range:
        return range(self.birth_frame, self.birth_frame + len(self.us))

    @property
    def lifetime(self) -> int:
        """Frames in which the feature was found and attributed correctly."""
        return len(self.us) - (1 if self.gated_out and self.gated_out[-1] else 0)

    def positions(self) -> np.ndarray:
        return np.stack([self.us, self.vs], axis=1)


@dataclass(frozen=True)
class FrameAttribution:
    frame: int
    f0: int
    f1: int
    f2: int
    f_prev: int
    degenerate: bool = False

    def __post_init__(self) -> None:
        if min(self.f0, self.f1, self.f2) < 0 or self.f0 + self.f1 > self.f_prev:
            raise ValueError("attribution counts violate f0 + f1 <= F_prev")


class TrackerState:
    def __init__(self, cfg: TrackerConfig, seed: int, scene_id: str):
        self.cfg = cfg
        self.seed = seed
        self.scene_id = scene_id
        self.tracks: list[FeatureTrack] = []
        self.live: list[FeatureTrack] = []
        self.prev: Frame | None = None
        self.next_id = 0

    def _occupancy_mask(self, shape: tuple[int, int], positions: np.ndarray) -> np.ndarray:
        h, w = shape
        margin = self.cfg.border_margin
        mask = np.ones((h, w), dtype=bool)
        mask[margin : h - margin, margin : w - margin] = False
        if len(positions):
            r = int(np.ceil(self.cfg.exclusion_radius))
            span = np.arange(-r, r + 1)
            dv, du = np.meshgrid(span, span, indexing="ij")
            disk = np.stack(
                [du.ravel(), dv.ravel()], axis=1
            )[(du**2 + dv**2).ravel() <= self.cfg.exclusion_radius**2]
            centers = np.rint(positions).astype(np.int64)
            pts = (centers[:, None, :] + disk[None, :, :]).reshape(-1, 2)
            np.clip(pts[:, 0], 0, w - 1, out=pts[:, 0])
            np.clip(pts[:, 1], 0, h - 1, out=pts[:, 1])
            mask[pts[:, 1], pts[:, 0]] = True
        return mask

    def _spawn(self, frame: Frame, corners: np.ndarray, descriptors: np.ndarray | None) -> int:
        for i, (u, v) in enumerate(corners):
            track = FeatureTrack(id=self.next_id, birth_frame=frame.index)
            self.next_id += 1
            track.append(u, v)
            if descriptors is not None:
                track.descriptor = descriptors[i].copy()
            self.tracks.append(track)
            self.live.append(track)
        return len(corners)


def init_tracker(frame: Frame, cfg: TrackerConfig, seed: int, scene_id: str = "scene") -> TrackerState:
    """Detect the initial feature set (fills to max_features)."""
    state = TrackerState(cfg, seed, scene_id)
    mask = state._occupancy_mask(frame.image.shape, np.empty((0, 2)))
    corners = detect_corners(
        frame.image,
        cfg.detector_threshold,
        cfg.nms_radius,
        mask=mask,
        limit=cfg.max_features,
    )
    descriptors = None
    if cfg.kind == CORRESPONDENCE:
        descriptors = compute_descriptors(frame.image, corners) if len(corners) else None
    state._spawn(frame, corners, descriptors)
    state.prev = frame
    return state


def _continue_differential(
    state: TrackerState, frame: Frame
) -> tuple[list[FeatureTrack], np.ndarray, np.ndarray, None]:
    cfg = state.cfg
    prev_pts = np.array([t.last_position for t in state.live], dtype=np.float64)
    new_pts, ok = track_flow(
        state.prev.image,
        frame.image,
        prev_pts,
        levels=cfg.pyramid_levels,
        radius=cfg.window_radius,
        max_iterations=cfg.max_iterations,
        epsilon=cfg.epsilon,
    )
    continued = [t for t, good in zip(state.live, ok) if good]
    return continued, prev_pts[ok], new_pts[ok], None


def _continue_correspondence(
    state: TrackerState, frame: Frame
) -> tuple[list[FeatureTrack], np.ndarray, np.ndarray, dict]:
    cfg = state.cfg
    h, w = frame.image.shape
    margin = cfg.border_margin
    border = np.ones((h, w), dtype=bool)
    border[margin : h - margin, margin : w - margin] = False
    candidates = detect_corners(
        frame.image, cfg.detector_threshold, cfg.nms_radius, mask=border
    )
    if len(candidates):
        cand_desc = compute_descriptors(frame.image, candidates)
    else:
        cand_desc = np.empty((0, 128))
    track_desc = np.stack([t.descriptor for t in state.live])
    assignment = match_mutual_nearest(track_desc, cand_desc, cfg.match_threshold)
    continued = [t for t, c in zip(state.live, assignment) if c >= 0]
    matched = assignment[assignment >= 0]
    prev_pts = np.array(
        [t.last_position for t in continued], dtype=np.float64
    ).reshape(-1, 2)
    new_pts = candidates[matched].reshape(-1, 2)
    leftovers = {
        "candidates": candidates,
        "descriptors": cand_desc,
        "taken": set(int(c) for c in matched),
    }
    return continued, prev_pts, new_pts, leftovers


def _refill_correspondence(
    state: TrackerState, frame: Frame, survivors: list[FeatureTrack], leftovers: dict, budget: int
) -> int:
    """Pick unmatched candidates honoring the exclusion radius, then spawn."""
    if budget <= 0:
        return 0
    cfg = state.cfg
    radius = cfg.exclusion_radius
    cell = max(int(np.ceil(radius)), 1)
    occupied: dict[tuple[int, int], list[tuple[float, float]]] = {}

    def blocked(u: float, v: float) -> bool:
        cu, cv = int(u // cell), int(v // cell)
        for gu in range(cu - 1, cu + 2):
            for gv in range(cv - 1, cv + 2):
                for ou, ov in occupied.get((gu, gv), ()):
                    if (ou - u) ** 2 + (ov - v) ** 2 <= radius**2:
                        return True
        return False

    def occupy(u: float, v: float) -> None:
        occupied.setdefault((int(u // cell), int(v // cell)), []).append((u, v))

    for t in survivors:
        occupy(*t.last_position)
    chosen: list[int] = []
    for i, (u, v) in enumerate(leftovers["candidates"]):
        if len(chosen) >= budget:
            break
        if i in leftovers["taken"] or blocked(u, v):
            continue
        occupy(u, v)
        chosen.append(i)
    if not chosen:
        return 0
    idx = np.array(chosen, dtype=np.int64)
    return state._spawn(
        frame, leftovers["candidates"][idx], leftovers["descriptors"][idx]
    )


def step_tracker(state: TrackerState, frame: Frame) -> FrameAttribution:
    """Advance one frame; returns the attribution record for this step."""
    cfg = state.cfg
    f_prev = len(state.live)
    if state.prev is None:
        raise RuntimeError("tracker not initialized")

    if f_prev == 0:
        continued, prev_pts, new_pts, leftovers = [], np.empty((0, 2)), np.empty((0, 2)), None
        if cfg.kind == CORRESPONDENCE:
            _, _, _, leftovers = _continue_correspondence_empty(state, frame)
    elif cfg.kind == DIFFERENTIAL:
        continued, prev_pts, new_pts, leftovers = _continue_differential(state, frame)
    else:
        continued, prev_pts, new_pts, leftovers = _continue_correspondence(state, frame)

    rng = derive_rng(state.seed, state.scene_id, cfg.kind, "ransac", frame.index)
    gate = ransac_gate(
        prev_pts,
        new_pts,
        threshold=cfg.ransac_threshold,
        p=cfg.ransac_p,
        rng=rng,
    )

    survivors: list[FeatureTrack] = []
    f0 = f1 = 0
    for track, (u, v), good in zip(continued, new_pts, gate.inliers):
        if good:
            track.append(u, v)
            survivors.append(track)
            f0 += 1
        else:
            track.append(u, v, gated_out=True)
            track.alive = False
            f1 += 1
    survivor_ids = {t.id for t in survivors}
    for track in state.live:
        if track.id not in survivor_ids:
            track.alive = False
    state.live = survivors

    f2 = 0
    deficit = cfg.min_features - len(state.live)
    if deficit > 0:
        budget = min(deficit, cfg.max_features - len(state.live))
        if cfg.kind == DIFFERENTIAL:
            positions = (
                np.array([t.last_position for t in state.live])
                if state.live
                else np.empty((0, 2))
            )
            mask = state._occupancy_mask(frame.image.shape, positions)
            corners = detect_corners(
                frame.image,
                cfg.detector_threshold,
                cfg.nms_radius,
                mask=mask,
                limit=budget,
            )
            f2 = state._spawn(frame, corners, None)
        else:
            f2 = _refill_correspondence(state, frame, state.live, leftovers, budget)

    state.prev = frame
    return FrameAttribution(
        frame=frame.index,
        f0=f0,
        f1=f1,
        f2=f2,
        f_prev=f_prev,
        degenerate=gate.degenerate,
    )


def _continue_correspondence_empty(state: TrackerState, frame: Frame):
    cfg = state.cfg
    h, w = frame.image.shape
    margin = cfg.border_margin
    border = np.ones((h, w), dtype=bool)
    border[margin : h - margin, margin : w - margin] = False
    candidates = detect_corners(
        frame.image, cfg.detector_threshold, cfg.nms_radius, mask=border
    )
    cand_desc = (
        compute_descriptors(frame.image, candidates)
        if len(candidates)
        else np.empty((0, 128))
    )
    leftovers = {"candidates": candidates, "descriptors": cand_desc, "taken": set()}
    return [], np.empty((0, 2)), np.empty((0, 2)), leftovers


def run_tracker(
    seq: SequenceBundle, cfg: TrackerConfig, seed: int
) -> tuple[list[FeatureTrack], list[FrameAttribution]]:
    """Track a whole sequence; returns all tracks (sorted by id) and
    per-frame attributions (frame 0 records the initial detections as f2)."""
    state = init_tracker(seq.frames[0], cfg, seed, seq.scene_id)
    attributions = [
        FrameAttribution(frame=0, f0=0, f1=0, f2=len(state.live), f_prev=0)
    ]
    for frame in seq.frames[1:]:
        attributions.append(step_tracker(state, frame))
    return state.tracks, attributions


def write_track_dump(tracks: list[FeatureTrack], path: Path) -> None:
    rows = ["track_id,birth_frame,frame,u,v,ransac_outlier"]
    for t in tracks:
        for offset, frame in enumerate(t.frames):
            rows.append(
                f"{t.id},{t.birth_frame},{frame},"
                f"{t.us[offset]!r},{t.vs[offset]!r},{int(t.gated_out[offset])}"
            )
    Path(path).write_text("\n".join(rows) + "\n")
