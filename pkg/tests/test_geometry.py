"""Projection, back-projection, and pose algebra.

Hand-computed cases pin the coordinate conventions; randomized round trips
pin numeric quality.  The camera is x right, y down, z forward, and poses
map camera-frame points into the spatial frame.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackbench.errors import NonPositiveDepth
from trackbench.geometry import (
    CameraIntrinsics,
    Pixel,
    Point3,
    RigidPose,
    backproject,
    backproject_pixels,
    compose,
    inverse,
    project,
    project_points,
    quat_from_axis_angle,
    quat_multiply,
    quat_normalize,
    quat_slerp,
    quat_to_matrix,
    transform,
    transform_points,
)

K = CameraIntrinsics(fx=100.0, fy=100.0, cx=400.0, cy=300.0, width=800, height=600)


def random_pose(rng):
    q = quat_normalize(rng.normal(size=4))
    t = rng.uniform(-10.0, 10.0, size=3)
    return RigidPose(q, t)


class TestProjection:
    def test_optical_axis_hits_principal_point(self):
        p = project(K, Point3(0.0, 0.0, 1.0))
        assert p.u == pytest.approx(400.0)
        assert p.v == pytest.approx(300.0)

    def test_off_axis_point(self):
        # u = 100 * 1/10 + 400, v = 100 * 2/10 + 300
        p = project(K, Point3(1.0, 2.0, 10.0))
        assert p.u == pytest.approx(410.0)
        assert p.v == pytest.approx(320.0)

    def test_depth_scales_out(self):
        near = project(K, Point3(0.5, -0.25, 2.0))
        far = project(K, Point3(1.0, -0.5, 4.0))
        assert near.u == pytest.approx(far.u)
        assert near.v == pytest.approx(far.v)

    def test_behind_camera_rejected(self):
        with pytest.raises(NonPositiveDepth):
            project(K, Point3(0.0, 0.0, -1.0))
        with pytest.raises(NonPositiveDepth):
            project(K, Point3(1.0, 1.0, 0.0))

    def test_batch_rejects_any_bad_depth(self):
        pts = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
        with pytest.raises(NonPositiveDepth):
            project_points(K, pts)


class TestBackprojection:
    def test_principal_point_lifts_to_axis(self):
        p = backproject(K, Pixel(400.0, 300.0), 5.0)
        assert p.as_array() == pytest.approx([0.0, 0.0, 5.0])

    def test_known_pixel(self):
        p = backproject(K, Pixel(410.0, 320.0), 10.0)
        assert p.as_array() == pytest.approx([1.0, 2.0, 10.0])

    def test_nonpositive_depth_rejected(self):
        with pytest.raises(NonPositiveDepth):
            backproject(K, Pixel(10.0, 10.0), 0.0)
        with pytest.raises(NonPositiveDepth):
            backproject(K, Pixel(10.0, 10.0), -2.0)

    def test_round_trip_random(self):
        rng = np.random.default_rng(7)
        px = np.stack(
            [rng.uniform(0, K.width, size=1000), rng.uniform(0, K.height, size=1000)], axis=-1
        )
        z = rng.uniform(0.1, 100.0, size=1000)
        back = project_points(K, backproject_pixels(K, px, z))
        np.testing.assert_allclose(back, px, atol=1e-9)


class TestPose:
    def test_identity_is_noop(self):
        p = Point3(1.0, 2.0, 3.0)
        q = transform(RigidPose.identity(), p)
        assert q.as_array() == pytest.approx(p.as_array())

    def test_pure_translation(self):
        pose = RigidPose(translation=np.array([1.0, -2.0, 0.5]))
        q = transform(pose, Point3(0.0, 0.0, 0.0))
        assert q.as_array() == pytest.approx([1.0, -2.0, 0.5])

    def test_quarter_turn_about_z(self):
        # +90 deg about z sends x to y
        pose = RigidPose.from_axis_angle(np.array([0.0, 0.0, 1.0]), math.pi / 2)
        q = transform(pose, Point3(1.0, 0.0, 0.0))
        assert q.as_array() == pytest.approx([0.0, 1.0, 0.0], abs=1e-12)

    def test_rotation_is_renormalized(self):
        pose = RigidPose(np.array([2.0, 0.0, 0.0, 0.0]), np.zeros(3))
        assert np.linalg.norm(pose.rotation) == pytest.approx(1.0)

    def test_compose_matches_sequential_apply(self):
        rng = np.random.default_rng(11)
        a, b = random_pose(rng), random_pose(rng)
        pts = rng.normal(size=(50, 3))
        two_step = transform_points(a, transform_points(b, pts))
        one_step = transform_points(compose(a, b), pts)
        np.testing.assert_allclose(one_step, two_step, atol=1e-12)

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            pose = random_pose(rng)
            pts = rng.normal(size=(20, 3)) * 10.0
            back = transform_points(inverse(pose), transform_points(pose, pts))
            np.testing.assert_allclose(back, pts, atol=1e-9)

    def test_matrix_agrees_with_transform(self):
        rng = np.random.default_rng(17)
        pose = random_pose(rng)
        pts = rng.normal(size=(10, 3))
        homo = np.concatenate([pts, np.ones((10, 1))], axis=1)
        via_matrix = (pose.matrix() @ homo.T).T[:, :3]
        np.testing.assert_allclose(via_matrix, transform_points(pose, pts), atol=1e-12)


class TestQuaternions:
    def test_multiply_matches_matrix_product(self):
        rng = np.random.default_rng(19)
        qa = quat_normalize(rng.normal(size=4))
        qb = quat_normalize(rng.normal(size=4))
        np.testing.assert_allclose(
            quat_to_matrix(quat_multiply(qa, qb)),
            quat_to_matrix(qa) @ quat_to_matrix(qb),
            atol=1e-12,
        )

    def test_long_composition_stays_unit(self):
        rng = np.random.default_rng(23)
        pose = RigidPose.identity()
        for _ in range(10_000):
            pose = compose(pose, random_pose(rng))
        assert abs(np.linalg.norm(pose.rotation) - 1.0) < 1e-6

    def test_slerp_endpoints_and_midpoint(self):
        q0 = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), 0.0)
        q1 = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), math.pi / 2)
        np.testing.assert_allclose(quat_slerp(q0, q1, 0.0), q0, atol=1e-12)
        np.testing.assert_allclose(quat_slerp(q0, q1, 1.0), q1, atol=1e-12)
        mid = quat_slerp(q0, q1, 0.5)
        expect = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), math.pi / 4)
        np.testing.assert_allclose(mid, expect, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-0.49, 0.49),
    st.floats(-0.49, 0.49),
    st.floats(0.01, 500.0),
)
def test_backproject_project_identity_property(du, dv, depth):
    """Lifting any pixel to any positive depth and reprojecting is exact."""
    px = Pixel(K.cx + du * K.width, K.cy + dv * K.height)
    p = backproject(K, px, depth)
    back = project(K, p)
    assert back.u == pytest.approx(px.u, abs=1e-9)
    assert back.v == pytest.approx(px.v, abs=1e-9)
