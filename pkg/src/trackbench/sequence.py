"""Sequence representation and on-disk formats.

A sequence directory holds:

- ``intrinsics.json``: fx, fy, cx, cy, width, height.
- ``frames/NNNNNN.pgm``: 8-bit binary grayscale, zero-padded 6-digit index.
- ``depth/NNNNNN.pfm``: optional float32 depth in meters; a missing file
  means no depth for that frame.  Non-positive or non-finite entries in a
  present raster mean "no depth at this pixel".
- ``poses.csv``: ``index,timestamp,tx,ty,tz,qw,qx,qy,qz`` per frame; the
  pose maps camera-frame points into the spatial frame.
- ``cloud.csv``: optional; first row ``keyframe,<index>``, then one
  ``x,y,z`` row per point, camera frame at the keyframe.

Playback speed is an integer frame-skip factor: speed s keeps original
indices 0, s, 2s, ...  Ground truth needs either complete per-frame depth
or a keyframe cloud; loading a directory with neither fails.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    FormatError,
    KeyframeSkipped,
    MissingStream,
)
from .geometry import CameraIntrinsics, RigidPose, compose

_ROT90 = RigidPose.from_axis_angle(np.array([0.0, 0.0, 1.0]), math.pi / 2)


@dataclass(frozen=True)
class Frame:
    """One timestep: image, optional depth, and camera pose.

    ``index`` is the position in the current sequence; ``original_index``
    survives frame skipping so playback speed stays attributable.
    """

    index: int
    original_index: int
    timestamp: float
    image: np.ndarray
    pose: RigidPose
    depth: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.image.ndim != 2 or self.image.dtype != np.uint8:
            raise DimensionMismatch("image must be a 2D uint8 raster")
        if self.depth is not None and self.depth.shape != self.image.shape:
            raise DimensionMismatch(
                f"depth shape {self.depth.shape} != image shape {self.image.shape}"
            )


@dataclass(frozen=True)
class KeyframeCloud:
    """3D points expressed in the camera frame at one designated frame."""

    keyframe: int
    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DimensionMismatch("cloud points must be (N, 3)")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class SpeedFactor:
    """Integer frame-skip factor; 1 is nominal playback."""

    value: int

    def __post_init__(self) -> None:
        if not isinstance(self.value, int) or self.value < 1:
            raise ValueError("speed factor must be an integer >= 1")


@dataclass(frozen=True)
class SequenceBundle:
    intrinsics: CameraIntrinsics
    frames: tuple[Frame, ...]
    cloud: KeyframeCloud | None = None
    scene_id: str = "scene"
    motion: str = "unknown"
    curated: bool = False  # still frames removed upstream, when true

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise FormatError("sequence has no frames")
        shape = (self.intrinsics.height, self.intrinsics.width)
        stamps = [f.timestamp for f in self.frames]
        for f in self.frames:
            if f.image.shape != shape:
                raise DimensionMismatch(
                    f"frame {f.index} image shape {f.image.shape} != intrinsics {shape}"
                )
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise FormatError("timestamps must be strictly increasing")
        if self.cloud is not None and not (0 <= self.cloud.keyframe < len(self.frames)):
            raise FormatError("cloud keyframe index out of range")

    @property
    def depth_complete(self) -> bool:
        return all(f.depth is not None for f in self.frames)

    @property
    def has_cloud(self) -> bool:
        return self.cloud is not None

    def pose(self, index: int) -> RigidPose:
        return self.frames[index].pose


# --- raster formats ---


def write_pgm(path: Path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise FormatError("PGM writer expects a 2D uint8 array")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def _read_header_tokens(fh, count: int) -> list[bytes]:
    # whitespace-separated tokens, '#' comments run to end of line
    tokens: list[bytes] = []
    current = b""
    while len(tokens) < count:
        ch = fh.read(1)
        if not ch:
            raise FormatError("truncated raster header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        if ch.isspace():
            if current:
                tokens.append(current)
                current = b""
            continue
        current += ch
    return tokens


def read_pgm(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic != b"P5":
            raise FormatError(f"{path.name}: not a binary PGM")
        w, h, maxval = (int(t) for t in _read_header_tokens(fh, 3))
        if maxval != 255:
            raise FormatError(f"{path.name}: only 8-bit PGM supported")
        data = fh.read(w * h)
    if len(data) != w * h:
        raise FormatError(f"{path.name}: pixel payload truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def write_pfm(path: Path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise FormatError("PFM writer expects a 2D array")
    h, w = values.shape
    with open(path, "wb") as fh:
        # negative scale marks little-endian; scanlines run bottom-up
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.flipud(values).astype("<f4").tobytes())


def read_pfm(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic != b"Pf":
            raise FormatError(f"{path.name}: not a grayscale PFM")
        w_tok, h_tok, scale_tok = _read_header_tokens(fh, 3)
        w, h = int(w_tok), int(h_tok)
        scale = float(scale_tok)
        payload = fh.read(4 * w * h)
    if len(payload) != 4 * w * h:
        raise FormatError(f"{path.name}: float payload truncated")
    dtype = "<f4" if scale < 0 else ">f4"
    values = np.frombuffer(payload, dtype=dtype).astype(np.float32).reshape(h, w)
    return np.flipud(values).copy()


# --- sequence directories ---


def _frame_name(index: int) -> str:
    return f"{index:06d}"


def save_sequence(bundle: SequenceBundle, path: Path) -> None:
    path = Path(path)
    (path / "frames").mkdir(parents=True, exist_ok=True)
    with open(path / "intrinsics.json", "w") as fh:
        json.dump(bundle.intrinsics.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    rows = ["index,timestamp,tx,ty,tz,qw,qx,qy,qz"]
    for f in bundle.frames:
        values = [f.timestamp, *f.pose.translation, *f.pose.rotation]
        rows.append(f"{f.index}," + ",".join(repr(float(v)) for v in values))
    (path / "poses.csv").write_text("\n".join(rows) + "\n")
    any_depth = any(f.depth is not None for f in bundle.frames)
    if any_depth:
        (path / "depth").mkdir(exist_ok=True)
    for f in bundle.frames:
        write_pgm(path / "frames" / f"{_frame_name(f.index)}.pgm", f.image)
        if f.depth is not None:
            write_pfm(path / "depth" / f"{_frame_name(f.index)}.pfm", f.depth)
    if bundle.cloud is not None:
        lines = [f"keyframe,{bundle.cloud.keyframe}"]
        lines.extend(
            ",".join(repr(float(v)) for v in p) for p in bundle.cloud.points
        )
        (path / "cloud.csv").write_text("\n".join(lines) + "\n")


def _load_intrinsics(path: Path) -> CameraIntrinsics:
    try:
        raw = json.loads(path.read_text())
        return CameraIntrinsics(
            fx=float(raw["fx"]),
            fy=float(raw["fy"]),
            cx=float(raw["cx"]),
            cy=float(raw["cy"]),
            width=int(raw["width"]),
            height=int(raw["height"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad intrinsics.json: {exc}") from exc


def _load_poses(path: Path) -> dict[int, tuple[float, RigidPose]]:
    poses: dict[int, tuple[float, RigidPose]] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("index"):
            continue
        parts = line.split(",")
        if len(parts) != 9:
            raise FormatError(f"poses.csv line {lineno}: expected 9 fields")
        try:
            idx = int(parts[0])
            stamp = float(parts[1])
            tx, ty, tz, qw, qx, qy, qz = (float(p) for p in parts[2:])
        except ValueError as exc:
            raise FormatError(f"poses.csv line {lineno}: {exc}") from exc
        if idx in poses:
            raise FormatError(f"poses.csv line {lineno}: duplicate index {idx}")
        poses[idx] = (stamp, RigidPose(np.array([qw, qx, qy, qz]), np.array([tx, ty, tz])))
    if not poses:
        raise FormatError("poses.csv has no pose rows")
    return poses


def _load_cloud(path: Path) -> KeyframeCloud:
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("keyframe,"):
        raise FormatError("cloud.csv must start with 'keyframe,<index>'")
    try:
        keyframe = int(lines[0].split(",")[1])
        pts = np.array(
            [[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=np.float64
        ).reshape(-1, 3)
    except ValueError as exc:
        raise FormatError(f"bad cloud.csv: {exc}") from exc
    return KeyframeCloud(keyframe=keyframe, points=pts)


def load_sequence(path: Path, motion: str = "unknown") -> SequenceBundle:
    path = Path(path)
    intr_path = path / "intrinsics.json"
    poses_path = path / "poses.csv"
    if not intr_path.is_file():
        raise MissingStream(f"{path}: no intrinsics.json")
    if not poses_path.is_file():
        raise MissingStream(f"{path}: no poses.csv")
    intrinsics = _load_intrinsics(intr_path)
    poses = _load_poses(poses_path)

    frame_files = sorted((path / "frames").glob("*.pgm")) if (path / "frames").is_dir() else []
    if not frame_files:
        raise MissingStream(f"{path}: no frames/*.pgm")
    frames: list[Frame] = []
    for position, img_path in enumerate(frame_files):
        try:
            idx = int(img_path.stem)
        except ValueError as exc:
            raise FormatError(f"bad frame filename {img_path.name}") from exc
        if idx not in poses:
            raise FormatError(f"frame {idx} has no pose row")
        image = read_pgm(img_path)
        depth_path = path / "depth" / f"{img_path.stem}.pfm"
        depth = read_pfm(depth_path) if depth_path.is_file() else None
        if depth is not None and depth.shape != image.shape:
            raise DimensionMismatch(
                f"frame {idx}: depth {depth.shape} vs image {image.shape}"
            )
        stamp, pose = poses[idx]
        frames.append(
            Frame(
                index=position,
                original_index=idx,
                timestamp=stamp,
                image=image,
                pose=pose,
                depth=depth,
            )
        )

    cloud_path = path / "cloud.csv"
    cloud = _load_cloud(cloud_path) if cloud_path.is_file() else None
    bundle = SequenceBundle(
        intrinsics=intrinsics,
        frames=tuple(frames),
        cloud=cloud,
        scene_id=path.name,
    )
    if motion != "unknown":
        bundle = replace(bundle, motion=motion)
    if not bundle.depth_complete and bundle.cloud is None:
        raise MissingStream(
            f"{path}: ground truth needs per-frame depth on every frame or a keyframe cloud"
        )
    return bundle


def apply_speed(bundle: SequenceBundle, speed: SpeedFactor) -> SequenceBundle:
    """Keep every speed-th frame, renumbering indices but not original ones."""
    s = speed.value
    if s == 1:
        return bundle
    kept = [
        replace(f, index=new_index)
        for new_index, f in enumerate(bundle.frames[::s])
    ]
    cloud = bundle.cloud
    if cloud is not None:
        if cloud.keyframe % s != 0:
            raise KeyframeSkipped(
                f"keyframe {cloud.keyframe} is dropped at speed {s}"
            )
        cloud = KeyframeCloud(keyframe=cloud.keyframe // s, points=cloud.points)
    return replace(bundle, frames=tuple(kept), cloud=cloud)


def rotate_sequence_90(bundle: SequenceBundle) -> SequenceBundle:
    """Rotate the whole sequence a quarter turn counter-clockwise in-plane.

    Pixel rasters rotate losslessly (no resampling); intrinsics, poses, and
    cloud points are remapped so projections of the same world geometry land
    on the rotated pixels exactly.  Old pixel (u, v) becomes (v, W-1-u).
    """
    k = bundle.intrinsics
    new_cy = k.width - 1 - k.cx
    rotated_k = CameraIntrinsics(
        fx=k.fy, fy=k.fx, cx=k.cy, cy=new_cy, width=k.height, height=k.width
    )
    frames = tuple(
        replace(
            f,
            image=np.ascontiguousarray(np.rot90(f.image)),
            depth=None if f.depth is None else np.ascontiguousarray(np.rot90(f.depth)),
            pose=compose(f.pose, _ROT90),
        )
        for f in bundle.frames
    )
    cloud = bundle.cloud
    if cloud is not None:
        # new camera axes: x' = y, y' = -x, z' = z
        pts = cloud.points
        rotated = np.stack([pts[:, 1], -pts[:, 0], pts[:, 2]], axis=1)
        cloud = KeyframeCloud(keyframe=cloud.keyframe, points=rotated)
    return replace(bundle, intrinsics=rotated_k, frames=frames, cloud=cloud)


def reverse_sequence(bundle: SequenceBundle) -> SequenceBundle:
    """Play the sequence backwards, renumbering frames and timestamps.

    Timestamps are mirrored about the last stamp so they stay strictly
    increasing; original indices ride along untouched.
    """
    last = bundle.frames[-1].timestamp
    frames = tuple(
        replace(f, index=i, timestamp=last - f.timestamp)
        for i, f in enumerate(reversed(bundle.frames))
    )
    cloud = bundle.cloud
    if cloud is not None:
        cloud = KeyframeCloud(
            keyframe=len(frames) - 1 - cloud.keyframe, points=cloud.points
        )
    return replace(bundle, frames=frames, cloud=cloud)
