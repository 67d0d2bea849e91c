"""Sequence IO: raster formats, directory round trips, frame skipping."""

import math

import numpy as np
import pytest

from trackbench.errors import (
    DimensionMismatch,
    FormatError,
    KeyframeSkipped,
    MissingStream,
)
from trackbench.geometry import (
    CameraIntrinsics,
    RigidPose,
    inverse,
    project_points,
    transform_points,
)
from trackbench.sequence import (
    Frame,
    KeyframeCloud,
    SequenceBundle,
    SpeedFactor,
    apply_speed,
    load_sequence,
    read_pfm,
    read_pgm,
    reverse_sequence,
    rotate_sequence_90,
    save_sequence,
    write_pfm,
    write_pgm,
)

K = CameraIntrinsics(fx=100.0, fy=100.0, cx=40.0, cy=30.0, width=80, height=60)


def make_bundle(n=10, with_depth=True, with_cloud=False, rng_seed=0):
    rng = np.random.default_rng(rng_seed)
    frames = []
    for i in range(n):
        image = rng.integers(0, 256, size=(K.height, K.width), dtype=np.uint8)
        depth = rng.uniform(1.0, 10.0, size=(K.height, K.width)).astype(np.float32)
        pose = RigidPose(translation=np.array([0.1 * i, 0.0, 0.0]))
        frames.append(
            Frame(
                index=i,
                original_index=i,
                timestamp=i / 30.0,
                image=image,
                pose=pose,
                depth=depth if with_depth else None,
            )
        )
    cloud = None
    if with_cloud:
        cloud = KeyframeCloud(keyframe=0, points=rng.uniform(-1, 1, size=(5, 3)) + [0, 0, 5])
    return SequenceBundle(intrinsics=K, frames=tuple(frames), cloud=cloud, scene_id="t")


class TestRasterFormats:
    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        image = rng.integers(0, 256, size=(60, 80), dtype=np.uint8)
        write_pgm(tmp_path / "a.pgm", image)
        np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), image)

    def test_pgm_header_comments(self, tmp_path):
        image = np.arange(6, dtype=np.uint8).reshape(2, 3)
        raw = b"P5\n# a comment\n3 2\n255\n" + image.tobytes()
        (tmp_path / "c.pgm").write_bytes(raw)
        np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), image)

    def test_pgm_rejects_truncated(self, tmp_path):
        (tmp_path / "bad.pgm").write_bytes(b"P5\n4 4\n255\n\x00\x00")
        with pytest.raises(FormatError):
            read_pgm(tmp_path / "bad.pgm")

    def test_pfm_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        values = rng.uniform(0.0, 50.0, size=(60, 80)).astype(np.float32)
        values[3, 4] = np.inf  # invalid-depth marker survives the format
        write_pfm(tmp_path / "d.pfm", values)
        np.testing.assert_array_equal(read_pfm(tmp_path / "d.pfm"), values)

    def test_pfm_scanlines_bottom_up(self, tmp_path):
        values = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        write_pfm(tmp_path / "e.pfm", values)
        raw = (tmp_path / "e.pfm").read_bytes()
        payload = np.frombuffer(raw.split(b"-1.0\n", 1)[1], dtype="<f4")
        # bottom row first in the file
        np.testing.assert_array_equal(payload, [3.0, 4.0, 1.0, 2.0])


class TestDirectoryRoundTrip:
    def test_full_round_trip(self, tmp_path):
        bundle = make_bundle(with_cloud=True)
        save_sequence(bundle, tmp_path / "seq")
        loaded = load_sequence(tmp_path / "seq")
        assert len(loaded.frames) == 10
        assert loaded.intrinsics == bundle.intrinsics
        for a, b in zip(loaded.frames, bundle.frames):
            np.testing.assert_array_equal(a.image, b.image)
            np.testing.assert_array_equal(a.depth, b.depth)
            assert a.timestamp == b.timestamp
            np.testing.assert_allclose(a.pose.rotation, b.pose.rotation, atol=0)
            np.testing.assert_allclose(a.pose.translation, b.pose.translation, atol=0)
        assert loaded.cloud.keyframe == 0
        np.testing.assert_array_equal(loaded.cloud.points, bundle.cloud.points)

    def test_missing_poses_rejected(self, tmp_path):
        save_sequence(make_bundle(), tmp_path / "seq")
        (tmp_path / "seq" / "poses.csv").unlink()
        with pytest.raises(MissingStream):
            load_sequence(tmp_path / "seq")

    def test_no_depth_no_cloud_rejected(self, tmp_path):
        save_sequence(make_bundle(), tmp_path / "seq")
        for p in (tmp_path / "seq" / "depth").glob("*.pfm"):
            p.unlink()
        with pytest.raises(MissingStream):
            load_sequence(tmp_path / "seq")

    def test_dimension_mismatch_rejected(self, tmp_path):
        save_sequence(make_bundle(), tmp_path / "seq")
        write_pfm(tmp_path / "seq" / "depth" / "000003.pfm", np.ones((10, 10), np.float32))
        with pytest.raises(DimensionMismatch):
            load_sequence(tmp_path / "seq")

    def test_malformed_pose_row_rejected(self, tmp_path):
        save_sequence(make_bundle(), tmp_path / "seq")
        poses = tmp_path / "seq" / "poses.csv"
        poses.write_text(poses.read_text().replace("0,", "zero,", 1))
        with pytest.raises(FormatError):
            load_sequence(tmp_path / "seq")


class TestSpeed:
    def test_nominal_speed_is_identity(self):
        bundle = make_bundle()
        assert apply_speed(bundle, SpeedFactor(1)) is bundle

    def test_skip_keeps_multiples(self):
        out = apply_speed(make_bundle(10), SpeedFactor(3))
        assert [f.original_index for f in out.frames] == [0, 3, 6, 9]
        assert [f.index for f in out.frames] == [0, 1, 2, 3]

    def test_pixel_data_untouched(self):
        bundle = make_bundle(10)
        out = apply_speed(bundle, SpeedFactor(2))
        for f in out.frames:
            np.testing.assert_array_equal(f.image, bundle.frames[f.original_index].image)

    def test_speed_composes_multiplicatively(self):
        bundle = make_bundle(30)
        a_then_b = apply_speed(apply_speed(bundle, SpeedFactor(2)), SpeedFactor(3))
        ab = apply_speed(bundle, SpeedFactor(6))
        assert [f.original_index for f in a_then_b.frames] == [
            f.original_index for f in ab.frames
        ]

    def test_cloud_keyframe_remapped(self):
        bundle = make_bundle(30)
        cloud = KeyframeCloud(keyframe=24, points=np.zeros((1, 3)) + [0, 0, 5])
        bundle = SequenceBundle(
            intrinsics=bundle.intrinsics, frames=bundle.frames, cloud=cloud
        )
        out = apply_speed(bundle, SpeedFactor(2))
        assert out.cloud.keyframe == 12

    def test_skipped_keyframe_fails_loudly(self):
        bundle = make_bundle(30)
        cloud = KeyframeCloud(keyframe=25, points=np.zeros((1, 3)) + [0, 0, 5])
        bundle = SequenceBundle(
            intrinsics=bundle.intrinsics, frames=bundle.frames, cloud=cloud
        )
        with pytest.raises(KeyframeSkipped):
            apply_speed(bundle, SpeedFactor(2))

    def test_bad_factor_rejected(self):
        with pytest.raises(ValueError):
            SpeedFactor(0)
        with pytest.raises(ValueError):
            SpeedFactor(2.0)  # type: ignore[arg-type]


class TestRotate90:
    def test_pixels_move_where_projection_says(self):
        bundle = make_bundle(3, with_cloud=True)
        out = rotate_sequence_90(bundle)
        k2 = out.intrinsics
        assert (k2.width, k2.height) == (K.height, K.width)
        # spot-check the raster remap: old (u, v) -> (v, W-1-u)
        f0, g0 = bundle.frames[0], out.frames[0]
        for u, v in [(0, 0), (17, 5), (79, 59)]:
            assert g0.image[K.width - 1 - u, v] == f0.image[v, u]

    def test_world_points_reproject_onto_rotated_pixels(self):
        bundle = make_bundle(4, with_cloud=True)
        out = rotate_sequence_90(bundle)
        rng = np.random.default_rng(3)
        world = rng.uniform(-1, 1, size=(50, 3)) + [0, 0, 6]
        for f_old, f_new in zip(bundle.frames, out.frames):
            cam_old = transform_points(inverse(f_old.pose), world)
            cam_new = transform_points(inverse(f_new.pose), world)
            px_old = project_points(bundle.intrinsics, cam_old)
            px_new = project_points(out.intrinsics, cam_new)
            np.testing.assert_allclose(px_new[:, 0], px_old[:, 1], atol=1e-9)
            np.testing.assert_allclose(
                px_new[:, 1], bundle.intrinsics.width - 1 - px_old[:, 0], atol=1e-9
            )

    def test_cloud_projects_onto_rotated_pixels(self):
        bundle = make_bundle(3, with_cloud=True)
        out = rotate_sequence_90(bundle)
        px_old = project_points(bundle.intrinsics, bundle.cloud.points)
        px_new = project_points(out.intrinsics, out.cloud.points)
        np.testing.assert_allclose(px_new[:, 0], px_old[:, 1], atol=1e-9)
        np.testing.assert_allclose(
            px_new[:, 1], bundle.intrinsics.width - 1 - px_old[:, 0], atol=1e-9
        )

    def test_four_rotations_restore_rasters(self):
        bundle = make_bundle(2)
        out = bundle
        for _ in range(4):
            out = rotate_sequence_90(out)
        np.testing.assert_array_equal(out.frames[0].image, bundle.frames[0].image)
        np.testing.assert_array_equal(out.frames[0].depth, bundle.frames[0].depth)
        assert out.intrinsics == bundle.intrinsics


class TestReverse:
    def test_frames_come_back_in_opposite_order(self):
        bundle = make_bundle(5)
        out = reverse_sequence(bundle)
        assert [f.index for f in out.frames] == [0, 1, 2, 3, 4]
        assert [f.original_index for f in out.frames] == [4, 3, 2, 1, 0]
        for f_new, f_old in zip(out.frames, reversed(bundle.frames)):
            np.testing.assert_array_equal(f_new.image, f_old.image)
            assert f_new.pose is f_old.pose

    def test_timestamps_stay_strictly_increasing(self):
        bundle = make_bundle(6)
        out = reverse_sequence(bundle)
        stamps = [f.timestamp for f in out.frames]
        assert all(b > a for a, b in zip(stamps, stamps[1:]))

    def test_double_reverse_is_identity(self):
        bundle = make_bundle(4, with_cloud=True)
        out = reverse_sequence(reverse_sequence(bundle))
        assert [f.original_index for f in out.frames] == [0, 1, 2, 3]
        assert out.cloud.keyframe == bundle.cloud.keyframe
        np.testing.assert_allclose(
            [f.timestamp for f in out.frames],
            [f.timestamp for f in bundle.frames],
            atol=1e-12,
        )

    def test_cloud_keyframe_tracks_its_frame(self):
        bundle = make_bundle(7, with_cloud=True)
        out = reverse_sequence(bundle)
        old_kf = bundle.cloud.keyframe
        assert out.frames[out.cloud.keyframe].original_index == old_kf


class TestBundleInvariants:
    def test_timestamps_must_increase(self):
        frames = list(make_bundle(3).frames)
        frames[2] = Frame(
            index=2,
            original_index=2,
            timestamp=frames[1].timestamp,
            image=frames[2].image,
            pose=frames[2].pose,
            depth=frames[2].depth,
        )
        with pytest.raises(FormatError):
            SequenceBundle(intrinsics=K, frames=tuple(frames))

    def test_image_shape_must_match_intrinsics(self):
        frame = Frame(
            index=0,
            original_index=0,
            timestamp=0.0,
            image=np.zeros((10, 10), np.uint8),
            pose=RigidPose.identity(),
        )
        with pytest.raises(DimensionMismatch):
            SequenceBundle(intrinsics=K, frames=(frame,))
