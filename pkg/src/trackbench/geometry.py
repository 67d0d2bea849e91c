"""Pinhole camera model and rigid-body pose algebra.

Conventions used throughout the package:

- Image frame: pixel (u, v) with u horizontal (right) and v vertical (down),
  origin at the center of the top-left pixel.  Sub-pixel values are allowed
  and pixels may lie outside the image bounds.
- Camera frame: right-handed, x right, y down, z forward along the optical
  axis.  Depth is the z coordinate of a camera-frame point, not ray length.
- A pose maps camera-frame points into the spatial frame:
  ``X_s = R @ X_c + t``.
- Rotations are stored as unit quaternions (w, x, y, z) and renormalized on
  every construction, so long composition chains cannot drift off the unit
  sphere.

Scalar operations (:func:`project`, :func:`backproject`, ...) work on the
small value types; the ``*_points`` variants are vectorized over ``(N, 3)``
and ``(N, 2)`` arrays and are what the pipeline uses internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDepth

# Depth at or below this is treated as "behind or on the camera plane".
MIN_DEPTH = 1e-9

_QUAT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; no distortion terms exist by design."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }


@dataclass(frozen=True)
class Pixel:
    """Continuous image coordinates in pixels."""

    u: float
    v: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError("pixel coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v], dtype=np.float64)


@dataclass(frozen=True)
class Point3:
    """A 3D point in meters."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if not all(map(math.isfinite, (self.x, self.y, self.z))):
            raise ValueError("point coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < _QUAT_NORM_TOL):
        raise ValueError("cannot normalize a near-zero quaternion")
    return q / norm


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product, broadcasting over leading axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion; broadcasts to (..., 3, 3)."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1)
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if norm < _QUAT_NORM_TOL:
        raise ValueError("rotation axis must be nonzero")
    axis = axis / norm
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * axis])


def quat_slerp(q0: np.ndarray, q1: np.ndarray, tau: float) -> np.ndarray:
    """Spherical linear interpolation along the shorter arc."""
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    dot = min(dot, 1.0)
    theta = math.acos(dot)
    if theta < 1e-9:
        return quat_normalize((1.0 - tau) * q0 + tau * q1)
    s = math.sin(theta)
    return quat_normalize(
        (math.sin((1.0 - tau) * theta) / s) * q0 + (math.sin(tau * theta) / s) * q1
    )


@dataclass(frozen=True)
class RigidPose:
    """Rigid transform mapping camera-frame points to the spatial frame.

    ``rotation`` is a unit quaternion (w, x, y, z); ``translation`` is in
    meters.  Both are copied and the quaternion renormalized on construction;
    treat instances as immutable.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        q = quat_normalize(np.asarray(self.rotation, dtype=np.float64).reshape(4))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls()

    @classmethod
    def from_axis_angle(
        cls, axis: np.ndarray, angle: float, translation: np.ndarray | None = None
    ) -> "RigidPose":
        t = np.zeros(3) if translation is None else translation
        return cls(quat_from_axis_angle(axis, angle), t)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous transform."""
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m


def transform(pose: RigidPose, point: Point3) -> Point3:
    out = transform_points(pose, point.as_array()[None, :])[0]
    return Point3(*out)


def transform_points(pose: RigidPose, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return points @ quat_to_matrix(pose.rotation).T + pose.translation


def compose(a: RigidPose, b: RigidPose) -> RigidPose:
    """Pose equivalent to applying ``b`` first, then ``a``."""
    q = quat_multiply(a.rotation, b.rotation)
    t = quat_to_matrix(a.rotation) @ b.translation + a.translation
    return RigidPose(q, t)


def inverse(pose: RigidPose) -> RigidPose:
    q = quat_conjugate(pose.rotation)
    t = -(quat_to_matrix(q) @ pose.translation)
    return RigidPose(q, t)


def project(intrinsics: CameraIntrinsics, point: Point3) -> Pixel:
    out = project_points(intrinsics, point.as_array()[None, :])[0]
    return Pixel(*out)


def project_points(intrinsics: CameraIntrinsics, points: np.ndarray) -> np.ndarray:
    """Project camera-frame points; raises on any depth <= MIN_DEPTH."""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    if np.any(z <= MIN_DEPTH):
        raise NonPositiveDepth("point at or behind the camera plane")
    u = intrinsics.fx * points[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * points[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1)


def backproject(intrinsics: CameraIntrinsics, pixel: Pixel, depth: float) -> Point3:
    out = backproject_pixels(
        intrinsics, pixel.as_array()[None, :], np.array([depth], dtype=np.float64)
    )[0]
    return Point3(*out)


def backproject_pixels(
    intrinsics: CameraIntrinsics, pixels: np.ndarray, depths: np.ndarray
) -> np.ndarray:
    """Lift pixels to camera-frame points at the given depths."""
    pixels = np.asarray(pixels, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    if np.any(depths <= 0):
        raise NonPositiveDepth("depth must be positive")
    x = (pixels[..., 0] - intrinsics.cx) / intrinsics.fx
    y = (pixels[..., 1] - intrinsics.cy) / intrinsics.fy
    return np.stack([x * depths, y * depths, depths], axis=-1)
