"""Synthetic sequences: a closed textured room rendered by ray casting.

The scene is a set of axis-aligned textured rectangles: six inward-facing
walls forming a closed room plus free-standing boxes.  Every camera ray
hits a surface, so depth is defined at every pixel and equals the analytic
ray-plane intersection (z of the camera-frame hit point) with no z-buffer
quantization.  Textures are procedural value noise mixed with a checker
component, evaluated from integer lattice hashes: the gray value at a
surface point depends only on (texture seed, position), never on render
order, so frames are bit-identical however work is scheduled.

Four trajectory families cover the motion taxonomy: sideways (pure
translation across the view axis), fixating (orbit holding a target on the
optical axis), forwards (translation along the view axis), and a
waypoint loop with eased translation (s(tau) = (1 - cos(pi tau)) / 2) and
slerped orientation.

The oracle tracker emits observations that are exact reprojections of
planted 3D points plus seeded Gaussian noise, bypassing detection and
matching, so the statistics layer can be validated against known moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpec
from .geometry import (
    CameraIntrinsics,
    RigidPose,
    inverse,
    project_points,
    quat_from_axis_angle,
    quat_slerp,
    quat_to_matrix,
    transform_points,
)
from .seeding import derive_rng, derive_seed
from .sequence import Frame, KeyframeCloud, SequenceBundle
from .tracking import FeatureTrack

DEFAULT_INTRINSICS = CameraIntrinsics(
    fx=500.0, fy=500.0, cx=400.0, cy=300.0, width=800, height=600
)


# --- procedural texture ---


def _mix(h: np.ndarray) -> np.ndarray:
    h = h.astype(np.uint64, copy=True)
    h ^= h >> np.uint64(30)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(27)
    h *= np.uint64(0x94D049BB133111EB)
    h ^= h >> np.uint64(31)
    return h


def lattice_hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Uniform [0, 1) value per integer lattice point; order-independent."""
    ix = ix.astype(np.int64).astype(np.uint64)
    iy = iy.astype(np.int64).astype(np.uint64)
    salt = np.uint64((seed * 0x165667B19E3779F9) & 0xFFFFFFFFFFFFFFFF)
    h = ix * np.uint64(0x9E3779B97F4A7C15) + iy * np.uint64(0xC2B2AE3D27D4EB4F) + salt
    return _mix(h) / np.float64(2**64)


def value_noise(x: np.ndarray, y: np.ndarray, seed: int) -> np.ndarray:
    """Smoothstep-interpolated lattice noise in [0, 1)."""
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    fx = fx * fx * (3.0 - 2.0 * fx)
    fy = fy * fy * (3.0 - 2.0 * fy)
    v00 = lattice_hash01(x0, y0, seed)
    v10 = lattice_hash01(x0 + 1, y0, seed)
    v01 = lattice_hash01(x0, y0 + 1, seed)
    v11 = lattice_hash01(x0 + 1, y0 + 1, seed)
    top = v00 * (1 - fx) + v10 * fx
    bottom = v01 * (1 - fx) + v11 * fx
    return top * (1 - fy) + bottom * fy


@dataclass(frozen=True)
class SurfaceTexture:
    """Multi-octave value noise plus optional checker and stripe components.

    Wavelengths are in meters on the surface; amplitudes halve per octave.
    ``base`` and ``contrast`` are gray levels; checker flips add/subtract
    ``checker_amp`` on a square grid of period ``checker_period`` meters.
    Stripes add a sine along the first tangent axis only: strong gradients
    in one direction with no two-dimensional structure of their own.
    """

    seed: int
    base: float = 128.0
    contrast: float = 60.0
    wavelengths: tuple[float, ...] = (0.04, 0.08, 0.16, 0.32)
    checker_period: float = 0.0
    checker_amp: float = 0.0
    stripe_period: float = 0.0
    stripe_amp: float = 0.0
    stripe_clip: float = 1.0  # <1 clips the sine into ramps and plateaus

    def sample(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        total = np.zeros_like(a, dtype=np.float64)
        weight = 0.0
        amp = 1.0
        for i, wavelength in enumerate(self.wavelengths):
            total += amp * value_noise(
                a / wavelength, b / wavelength, derive_seed(self.seed, "octave", i)
            )
            weight += amp
            amp *= 0.5
        gray = self.base + self.contrast * (total / weight - 0.5) * 2.0
        if self.checker_period > 0.0 and self.checker_amp != 0.0:
            parity = (
                np.floor(a / self.checker_period) + np.floor(b / self.checker_period)
            ) % 2.0
            gray = gray + self.checker_amp * (2.0 * parity - 1.0)
        if self.stripe_period > 0.0 and self.stripe_amp != 0.0:
            wave = np.sin(2.0 * np.pi * a / self.stripe_period)
            wave = np.clip(wave / self.stripe_clip, -1.0, 1.0)
            gray = gray + self.stripe_amp * wave
        return gray


# --- geometry ---

_TANGENTS = {0: (1, 2), 1: (0, 2), 2: (0, 1)}


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle: plane {axis = offset} bounded on the others."""

    axis: int
    offset: float
    a_lo: float
    a_hi: float
    b_lo: float
    b_hi: float
    texture: SurfaceTexture

    @property
    def tangent_axes(self) -> tuple[int, int]:
        return _TANGENTS[self.axis]


@dataclass(frozen=True)
class Scene:
    rects: tuple[Rect, ...]
    seed: int


def make_box(center, size, texture_seed, **texture_kw) -> list[Rect]:
    """Six outward rectangles forming an axis-aligned box."""
    center = np.asarray(center, dtype=np.float64)
    half = np.asarray(size, dtype=np.float64) / 2.0
    rects = []
    for axis in range(3):
        ta, tb = _TANGENTS[axis]
        for side, sign in enumerate((-1.0, 1.0)):
            rects.append(
                Rect(
                    axis=axis,
                    offset=center[axis] + sign * half[axis],
                    a_lo=center[ta] - half[ta],
                    a_hi=center[ta] + half[ta],
                    b_lo=center[tb] - half[tb],
                    b_hi=center[tb] + half[tb],
                    texture=SurfaceTexture(
                        seed=derive_seed(texture_seed, "face", axis, side), **texture_kw
                    ),
                )
            )
    return rects


def make_room(lo, hi, seed, wall_kw, floor_kw) -> list[Rect]:
    """Six inward faces of the room box: walls (z, x axes) and floor/ceiling."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    rects = []
    for axis in range(3):
        ta, tb = _TANGENTS[axis]
        for side, offset in enumerate((lo[axis], hi[axis])):
            kw = floor_kw if axis == 1 else wall_kw
            rects.append(
                Rect(
                    axis=axis,
                    offset=offset,
                    a_lo=lo[ta],
                    a_hi=hi[ta],
                    b_lo=lo[tb],
                    b_hi=hi[tb],
                    texture=SurfaceTexture(
                        seed=derive_seed(seed, "room", axis, side), **kw
                    ),
                )
            )
    return rects


# --- rendering ---


def _pixel_directions(k: CameraIntrinsics) -> np.ndarray:
    us = (np.arange(k.width) - k.cx) / k.fx
    vs = (np.arange(k.height) - k.cy) / k.fy
    u, v = np.meshgrid(us, vs)
    return np.stack([u, v, np.ones_like(u)], axis=-1)  # z component 1: t = depth


def _rect_screen_region(
    rect: Rect, pose: RigidPose, k: CameraIntrinsics
) -> tuple[int, int, int, int] | None:
    """Conservative pixel bounding box of the rectangle, or None if behind."""
    ta, tb = rect.tangent_axes
    corners = np.zeros((4, 3))
    corners[:, rect.axis] = rect.offset
    corners[:, ta] = [rect.a_lo, rect.a_hi, rect.a_lo, rect.a_hi]
    corners[:, tb] = [rect.b_lo, rect.b_lo, rect.b_hi, rect.b_hi]
    cam = transform_points(inverse(pose), corners)
    if np.all(cam[:, 2] <= 1e-6):
        return None
    if np.any(cam[:, 2] <= 1e-6):
        return 0, k.width, 0, k.height  # crosses the image plane: no cheap bound
    px = np.stack(
        [k.fx * cam[:, 0] / cam[:, 2] + k.cx, k.fy * cam[:, 1] / cam[:, 2] + k.cy],
        axis=1,
    )
    u0 = int(np.floor(px[:, 0].min())) - 1
    u1 = int(np.ceil(px[:, 0].max())) + 2
    v0 = int(np.floor(px[:, 1].min())) - 1
    v1 = int(np.ceil(px[:, 1].max())) + 2
    u0, u1 = max(u0, 0), min(u1, k.width)
    v0, v1 = max(v0, 0), min(v1, k.height)
    if u0 >= u1 or v0 >= v1:
        return None
    return u0, u1, v0, v1


def render(
    scene: Scene, pose: RigidPose, k: CameraIntrinsics = DEFAULT_INTRINSICS
) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast one frame; returns (image uint8, depth float32)."""
    dirs_cam = _pixel_directions(k)
    rot = quat_to_matrix(pose.rotation)
    dirs = dirs_cam @ rot.T
    origin = pose.translation

    depth = np.full((k.height, k.width), np.inf)
    hit_rect = np.full((k.height, k.width), -1, dtype=np.int32)
    hit_a = np.zeros((k.height, k.width))
    hit_b = np.zeros((k.height, k.width))

    for i, rect in enumerate(scene.rects):
        region = _rect_screen_region(rect, pose, k)
        if region is None:
            continue
        u0, u1, v0, v1 = region
        d = dirs[v0:v1, u0:u1]
        denom = d[..., rect.axis]
        ta, tb = rect.tangent_axes
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (rect.offset - origin[rect.axis]) / denom
            pa = origin[ta] + t * d[..., ta]
            pb = origin[tb] + t * d[..., tb]
            ok = (
                (t > 1e-6)
                & (pa >= rect.a_lo)
                & (pa <= rect.a_hi)
                & (pb >= rect.b_lo)
                & (pb <= rect.b_hi)
            )
            closer = ok & (t < depth[v0:v1, u0:u1])
        depth_region = depth[v0:v1, u0:u1]
        depth_region[closer] = t[closer]
        hit_rect[v0:v1, u0:u1][closer] = i
        hit_a[v0:v1, u0:u1][closer] = pa[closer]
        hit_b[v0:v1, u0:u1][closer] = pb[closer]

    if np.any(hit_rect < 0):
        raise InvalidSpec("scene is not closed: some rays escape")

    gray = np.zeros((k.height, k.width))
    for i, rect in enumerate(scene.rects):
        mask = hit_rect == i
        if not np.any(mask):
            continue
        gray[mask] = rect.texture.sample(hit_a[mask], hit_b[mask])
    image = np.clip(np.rint(gray), 0, 255).astype(np.uint8)
    return image, depth.astype(np.float32)


# --- trajectories ---


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str  # sideways | fixating | forwards | arvr
    frames: int
    fps: float = 30.0
    baseline: float = 0.8  # meters traveled (sideways/forwards)
    radius: float = 2.0  # orbit radius (fixating)
    arc: float = math.radians(25.0)  # orbit sweep (fixating)
    target: tuple[float, float, float] = (0.0, 0.0, 5.0)
    waypoints: tuple = ()  # arvr: ((pos3, quat4), ...)

    def __post_init__(self) -> None:
        if self.frames < 2:
            raise InvalidSpec("trajectory needs at least 2 frames")
        if self.kind == "fixating" and self.radius <= 0:
            raise InvalidSpec("fixating radius must be positive")
        if self.kind not in ("sideways", "fixating", "forwards", "arvr"):
            raise InvalidSpec(f"unknown motion kind {self.kind!r}")


def _look_at(position: np.ndarray, target: np.ndarray) -> RigidPose:
    z = target - position
    z = z / np.linalg.norm(z)
    y_hint = np.array([0.0, 1.0, 0.0])
    x = np.cross(y_hint, z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z], axis=1)
    # matrix -> quaternion, stable branch selection
    w = math.sqrt(max(0.0, 1.0 + rot[0, 0] + rot[1, 1] + rot[2, 2])) / 2.0
    if w > 1e-6:
        q = np.array(
            [
                w,
                (rot[2, 1] - rot[1, 2]) / (4 * w),
                (rot[0, 2] - rot[2, 0]) / (4 * w),
                (rot[1, 0] - rot[0, 1]) / (4 * w),
            ]
        )
    else:
        d = np.diagonal(rot)
        i = int(np.argmax(d))
        j, l = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(0.0, 1.0 + d[i] - d[j] - d[l])) * 2.0
        q = np.zeros(4)
        q[0] = (rot[l, j] - rot[j, l]) / s
        q[1 + i] = s / 4.0
        q[1 + j] = (rot[j, i] + rot[i, j]) / s
        q[1 + l] = (rot[l, i] + rot[i, l]) / s
    return RigidPose(q, position)


def ease_haversine(tau: float) -> float:
    return (1.0 - math.cos(math.pi * tau)) / 2.0


def make_trajectory(spec: TrajectorySpec) -> list[RigidPose]:
    n = spec.frames
    if spec.kind == "sideways":
        # camera slides toward -x, so scene content sweeps left-to-right
        xs = np.linspace(spec.baseline / 2.0, -spec.baseline / 2.0, n)
        return [RigidPose(translation=np.array([x, 0.0, 0.0])) for x in xs]
    if spec.kind == "forwards":
        zs = np.linspace(0.0, spec.baseline, n)
        return [RigidPose(translation=np.array([0.0, 0.0, z])) for z in zs]
    if spec.kind == "fixating":
        target = np.asarray(spec.target, dtype=np.float64)
        thetas = np.linspace(-spec.arc / 2.0, spec.arc / 2.0, n)
        poses = []
        for theta in thetas:
            position = target + spec.radius * np.array(
                [math.sin(theta), 0.0, -math.cos(theta)]
            )
            poses.append(_look_at(position, target))
        return poses
    # arvr
    waypoints = spec.waypoints or _default_loop()
    if len(waypoints) < 2:
        raise InvalidSpec("waypoint trajectory needs at least 2 waypoints")
    segments = len(waypoints) - 1
    poses = []
    for i in range(n):
        s = i / (n - 1) * segments
        seg = min(int(s), segments - 1)
        tau = s - seg
        (p0, q0), (p1, q1) = waypoints[seg], waypoints[seg + 1]
        p0 = np.asarray(p0, dtype=np.float64)
        p1 = np.asarray(p1, dtype=np.float64)
        eased = ease_haversine(tau)
        position = p0 + (p1 - p0) * eased
        rotation = quat_slerp(np.asarray(q0), np.asarray(q1), eased)
        poses.append(RigidPose(rotation, position))
    return poses


def _default_loop() -> tuple:
    """Small pose loop with bounded yaw/pitch excursions."""
    identity = np.array([1.0, 0.0, 0.0, 0.0])
    yaw = lambda deg: quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), math.radians(deg))
    pitch = lambda deg: quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), math.radians(deg))
    return (
        (np.array([0.0, 0.0, 0.0]), identity),
        (np.array([0.5, -0.1, 0.3]), yaw(20.0)),
        (np.array([0.2, 0.15, 0.6]), pitch(-12.0)),
        (np.array([-0.4, 0.05, 0.2]), yaw(-18.0)),
        (np.array([0.0, 0.0, 0.0]), identity),
    )


# --- stock scene ---


def build_scene(seed: int) -> Scene:
    """Closed room: textured boxes floating before a smooth backdrop layer.

    Two depth layers sit about a meter apart on purpose.  The front layer
    mixes solid textured boxes with thin banded slats; the backdrop slab
    behind them carries a striped texture with real gradients but no
    corner-grade structure.  Under lateral motion the two layers move at
    different image rates, so any estimation window that overlaps both
    gets pulled toward the backdrop rate in proportion to the gradient
    energy it contributes; a re-detected corner pattern does not.  Slat
    banding contrast is kept near the detector threshold on purpose,
    which makes slat corners flicker in and out of detection from frame
    to frame.
    """
    rng = derive_rng(seed, "layout")
    rects = make_room(
        lo=(-8.0, -3.0, -4.0),
        hi=(8.0, 3.0, 12.0),
        seed=derive_seed(seed, "room"),
        wall_kw=dict(base=118.0, contrast=12.0, wavelengths=(0.3, 0.6, 1.2)),
        floor_kw=dict(base=110.0, contrast=35.0, wavelengths=(0.08, 0.16, 0.32)),
    )
    # striped backdrop: one slab wide enough to fill the view from every
    # pose; a single face means no seams, and purely vertical stripe
    # edges never complete a contiguous detector arc on their own
    rects.extend(
        make_box(
            center=(0.0, 0.0, 5.86),
            size=(11.5, 7.6, 0.16),
            texture_seed=derive_seed(seed, "slab"),
            base=122.0,
            contrast=10.0,
            wavelengths=(0.25, 0.5, 1.0),
            stripe_period=0.12,
            stripe_amp=34.0,
            stripe_clip=0.55,
        )
    )
    # 9x5 grid of small front-box slots in one narrow depth row; small
    # boxes put most of the corner budget on silhouettes, not interiors
    slots = [
        (gx * 0.82 - 3.28, gy * 1.08 - 2.16) for gy in range(5) for gx in range(9)
    ]
    order = rng.permutation(len(slots))
    for n, slot in enumerate(order[:30]):
        x, y = slots[slot]
        x += float(rng.uniform(-0.1, 0.1))
        y += float(rng.uniform(-0.1, 0.1))
        z = 4.85 + float(rng.uniform(-0.06, 0.06))
        size = rng.uniform(0.26, 0.36, size=3)
        rects.extend(
            make_box(
                center=(x, y, z),
                size=size,
                texture_seed=derive_seed(seed, "box", n),
                base=135.0,
                contrast=62.0,
                wavelengths=(0.04, 0.08, 0.16, 0.32),
                checker_period=0.12,
                checker_amp=34.0,
            )
        )
    # vertical slats between the box columns, two per column
    for gx in range(9):
        for gy, yc in enumerate((-1.1, 1.1)):
            x = gx * 0.82 - 2.87 + float(rng.uniform(-0.08, 0.08))
            y = yc + float(rng.uniform(-0.25, 0.25))
            z = 4.82 + float(rng.uniform(-0.05, 0.05))
            rects.extend(
                make_box(
                    center=(x, y, z),
                    size=(0.024, float(rng.uniform(0.7, 1.0)), 0.03),
                    texture_seed=derive_seed(seed, "slat", gx, gy),
                    base=122.0,
                    contrast=16.0,
                    wavelengths=(0.05, 0.1, 0.2),
                    checker_period=0.09,
                    checker_amp=24.0,
                )
            )
    return Scene(rects=tuple(rects), seed=seed)


@dataclass(frozen=True)
class SequenceConfig:
    """One rendered sequence: a scene, a trajectory, and capture options."""

    scene_seed: int
    trajectory: TrajectorySpec
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    scene_id: str = "scene"
    keep_depth: bool = True
    cloud_keyframe: int | None = None
    cloud_stride: int = 8  # pixel stride of the keyframe depth sampling grid


def generate(config: SequenceConfig) -> SequenceBundle:
    """Render a full sequence bundle from a config, deterministically."""
    scene = build_scene(config.scene_seed)
    poses = make_trajectory(config.trajectory)
    k = config.intrinsics
    frames = []
    cloud = None
    for i, pose in enumerate(poses):
        image, depth = render(scene, pose, k)
        if config.cloud_keyframe is not None and i == config.cloud_keyframe:
            cloud = KeyframeCloud(
                keyframe=i, points=_depth_to_cloud(depth, k, config.cloud_stride)
            )
        frames.append(
            Frame(
                index=i,
                original_index=i,
                timestamp=i / config.trajectory.fps,
                image=image,
                pose=pose,
                depth=depth if config.keep_depth else None,
            )
        )
    if not config.keep_depth and cloud is None:
        raise InvalidSpec("sequence needs depth frames or a keyframe cloud")
    return SequenceBundle(
        intrinsics=k,
        frames=tuple(frames),
        cloud=cloud,
        scene_id=config.scene_id,
        motion=config.trajectory.kind,
    )


def _depth_to_cloud(depth: np.ndarray, k: CameraIntrinsics, stride: int) -> np.ndarray:
    vs, us = np.meshgrid(
        np.arange(0, k.height, stride), np.arange(0, k.width, stride), indexing="ij"
    )
    z = depth[vs, us].astype(np.float64)
    x = (us - k.cx) / k.fx * z
    y = (vs - k.cy) / k.fy * z
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def reverse_sequence(seq: SequenceBundle) -> SequenceBundle:
    """Same scene traversed backwards; timestamps re-stamped increasing."""
    n = len(seq.frames)
    if seq.cloud is not None:
        cloud = KeyframeCloud(
            keyframe=n - 1 - seq.cloud.keyframe, points=seq.cloud.points
        )
    else:
        cloud = None
    step = seq.frames[1].timestamp - seq.frames[0].timestamp if n > 1 else 1.0
    frames = tuple(
        Frame(
            index=i,
            original_index=src.original_index,
            timestamp=i * step,
            image=src.image,
            pose=src.pose,
            depth=src.depth,
        )
        for i, src in enumerate(reversed(seq.frames))
    )
    return SequenceBundle(
        intrinsics=seq.intrinsics,
        frames=frames,
        cloud=cloud,
        scene_id=seq.scene_id + "-rev",
        motion=seq.motion,
    )


# --- oracle tracker ---


def oracle_tracker(
    seq: SequenceBundle,
    points: np.ndarray,
    bias: tuple[float, float] = (0.0, 0.0),
    sigma: float | tuple[float, float] = 0.0,
    seed: int = 0,
) -> list[FeatureTrack]:
    """Tracks that are exact reprojections of known 3D points plus noise.

    ``points`` are world-frame (N, 3).  Each visible point yields one track
    whose observation at frame t is the true projection plus ``bias`` plus
    N(0, sigma^2) noise; a scalar ``sigma`` applies to both axes, a pair
    gives per-axis deviations.  Tracks end when the point leaves the
    image or passes behind the camera.  Useful for validating error and
    statistics computations against analytically known distributions.
    """
    points = np.asarray(points, dtype=np.float64)
    scale = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (2,))
    k = seq.intrinsics
    rng = derive_rng(seed, seq.scene_id, "oracle")
    tracks: list[FeatureTrack] = []
    open_tracks: dict[int, FeatureTrack] = {}
    for frame in seq.frames:
        cam = transform_points(inverse(frame.pose), points)
        visible = cam[:, 2] > 1e-6
        px = np.full((len(points), 2), np.nan)
        if np.any(visible):
            px[visible] = project_points(k, cam[visible])
        noise = rng.normal(size=(len(points), 2)) * scale if np.any(scale > 0) else 0.0
        obs = px + np.asarray(bias) + noise
        inside = (
            visible
            & (obs[:, 0] >= 0)
            & (obs[:, 0] <= k.width - 1)
            & (obs[:, 1] >= 0)
            & (obs[:, 1] <= k.height - 1)
        )
        for j in range(len(points)):
            if inside[j]:
                track = open_tracks.get(j)
                if track is None:
                    track = FeatureTrack(id=len(tracks), birth_frame=frame.index)
                    tracks.append(track)
                    open_tracks[j] = track
                track.append(float(obs[j, 0]), float(obs[j, 1]))
            elif j in open_tracks:
                del open_tracks[j]  # track dies; a later re-entry starts a new one
    return tracks
