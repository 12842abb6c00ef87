"""Core geometry: rotation conventions, projection, Euler round trips."""

import numpy as np
import pytest

from shapealign.errors import (
    DegenerateMesh,
    DegenerateProjection,
    IndexOutOfRange,
    LengthMismatch,
)
from shapealign.geometry import (
    CameraIntrinsics,
    KeypointSet2D,
    KeypointSet3D,
    ProjectionMatrix,
    RigidPose,
    TriangleMesh,
    compose,
    mesh_euler_characteristic,
    mesh_is_watertight,
    pose_from_rt,
    project,
    project_points,
    projection_depths,
    reprojection_error,
    rotation_geodesic_deg,
    rotation_matrix,
)


class TestRotationMatrix:
    def test_identity_at_zero_angles(self):
        pose = RigidPose(theta=0, phi=0, psi=0, x=0, y=0, z=0)
        np.testing.assert_allclose(rotation_matrix(pose), np.eye(3), atol=1e-15)

    def test_azimuth_quarter_turn_maps_x_to_minus_z(self):
        # Rotation about +Y by 90 degrees sends (1,0,0) to (0,0,-1).
        pose = RigidPose(theta=np.pi / 2, phi=0, psi=0, x=0, y=0, z=0)
        out = rotation_matrix(pose) @ np.array([1.0, 0.0, 0.0])
        np.testing.assert_allclose(out, [0.0, 0.0, -1.0], atol=1e-15)

    def test_composition_order_is_z_then_y_then_x(self):
        pose = RigidPose(theta=0.3, phi=-0.7, psi=1.1, x=0, y=0, z=0)
        rz = rotation_matrix(RigidPose(theta=0, phi=0, psi=1.1, x=0, y=0, z=0))
        ry = rotation_matrix(RigidPose(theta=0.3, phi=0, psi=0, x=0, y=0, z=0))
        rx = rotation_matrix(RigidPose(theta=0, phi=-0.7, psi=0, x=0, y=0, z=0))
        np.testing.assert_allclose(rotation_matrix(pose), rz @ ry @ rx,
                                   atol=1e-14)

    def test_orthonormal_determinant_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            pose = RigidPose(theta=rng.uniform(-np.pi, np.pi),
                             phi=rng.uniform(-np.pi / 2, np.pi / 2),
                             psi=rng.uniform(-np.pi, np.pi), x=0, y=0, z=0)
            R = rotation_matrix(pose)
            np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-14)
            assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


class TestPoseFromRt:
    def test_euler_round_trip_canonical_range(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            angles = (rng.uniform(-np.pi, np.pi),
                      rng.uniform(-np.pi / 2 + 1e-6, np.pi / 2 - 1e-6),
                      rng.uniform(-np.pi, np.pi))
            t = rng.normal(0, 2, 3)
            pose = RigidPose(theta=angles[0], phi=angles[1], psi=angles[2],
                             x=t[0], y=t[1], z=t[2])
            back = pose_from_rt(rotation_matrix(pose), t)
            np.testing.assert_allclose(
                [back.theta, back.phi, back.psi], angles, atol=1e-9)
            np.testing.assert_allclose(back.translation, t, atol=1e-12)

    def test_rotation_round_trip_outside_canonical_elevation(self):
        # Angles outside the canonical branch still reproduce the matrix.
        pose = RigidPose(theta=0.4, phi=2.5, psi=-0.9, x=1, y=2, z=3)
        R = rotation_matrix(pose)
        back = pose_from_rt(R, pose.translation)
        np.testing.assert_allclose(rotation_matrix(back), R, atol=1e-12)
        assert -np.pi / 2 <= back.phi <= np.pi / 2

    def test_gimbal_lock_still_reproduces_rotation(self):
        pose = RigidPose(theta=0.0, phi=np.pi / 2, psi=0.3, x=0, y=0, z=0)
        R = rotation_matrix(pose)
        back = pose_from_rt(R, np.zeros(3))
        np.testing.assert_allclose(rotation_matrix(back), R, atol=1e-9)


class TestProjection:
    def test_known_projection(self):
        # f=100, 640x480 image, identity pose: (0.5, 0.25, 2) maps to
        # (100*0.5/2 + 320, 100*0.25/2 + 240) = (345, 252.5).
        intr = CameraIntrinsics(f=100, w=640, h=480)
        pose = RigidPose(theta=0, phi=0, psi=0, x=0, y=0, z=2.0)
        P = compose(intr, pose)
        uv = project(P, np.array([0.5, 0.25, 0.0]))
        np.testing.assert_allclose(uv, [345.0, 252.5])

    def test_principal_point_is_image_center(self):
        intr = CameraIntrinsics(f=500, w=640, h=480)
        K = intr.matrix
        np.testing.assert_allclose(K, [[500, 0, 320], [0, 500, 240],
                                       [0, 0, 1]])

    def test_zero_depth_raises(self):
        intr = CameraIntrinsics(f=100, w=640, h=480)
        pose = RigidPose(theta=0, phi=0, psi=0, x=0, y=0, z=0)
        P = compose(intr, pose)
        with pytest.raises(DegenerateProjection):
            project(P, np.array([0.1, 0.2, 0.0]))

    def test_project_points_matches_scalar_loop(self):
        rng = np.random.default_rng(2)
        intr = CameraIntrinsics(f=800, w=640, h=480)
        pose = RigidPose(theta=0.5, phi=-0.2, psi=0.9, x=0.1, y=0.2, z=4.0)
        P = compose(intr, pose)
        pts = rng.uniform(-1, 1, (15, 3))
        batch = project_points(P, pts)
        single = np.array([project(P, p) for p in pts])
        np.testing.assert_allclose(batch, single, atol=1e-12)

    def test_projection_depths_positive_in_front(self):
        intr = CameraIntrinsics(f=800, w=640, h=480)
        pose = RigidPose(theta=0, phi=0, psi=0, x=0, y=0, z=3.0)
        P = compose(intr, pose)
        depths = projection_depths(P, np.array([[0.0, 0.0, 0.5]]))
        assert depths[0] == pytest.approx(3.5)


class TestReprojectionError:
    def test_exact_projection_gives_zero(self):
        intr = CameraIntrinsics(f=800, w=640, h=480)
        pose = RigidPose(theta=0.3, phi=0.1, psi=-0.2, x=0, y=0, z=3.0)
        P = compose(intr, pose)
        pts = np.random.default_rng(3).uniform(-0.5, 0.5, (8, 3))
        uv = project_points(P, pts)
        err = reprojection_error(P, KeypointSet3D(pts), KeypointSet2D(uv))
        assert err == pytest.approx(0.0, abs=1e-18)

    def test_single_point_offset_is_squared_distance(self):
        intr = CameraIntrinsics(f=800, w=640, h=480)
        pose = RigidPose(theta=0, phi=0, psi=0, x=0, y=0, z=3.0)
        P = compose(intr, pose)
        pts = np.array([[0.0, 0.0, 0.0]])
        uv = project_points(P, pts) + np.array([[3.0, 4.0]])
        err = reprojection_error(P, KeypointSet3D(pts), KeypointSet2D(uv))
        assert err == pytest.approx(25.0)

    def test_invisible_keypoints_do_not_contribute(self):
        intr = CameraIntrinsics(f=800, w=640, h=480)
        pose = RigidPose(theta=0, phi=0, psi=0, x=0, y=0, z=3.0)
        P = compose(intr, pose)
        pts = np.array([[0.0, 0.0, 0.0], [0.1, 0.1, 0.1]])
        uv = project_points(P, pts)
        uv[1] += 1000.0
        vis = np.array([True, False])
        err = reprojection_error(P, KeypointSet3D(pts),
                                 KeypointSet2D(uv, vis))
        assert err == pytest.approx(0.0, abs=1e-18)

    def test_length_mismatch_raises(self):
        intr = CameraIntrinsics(f=800, w=640, h=480)
        P = compose(intr, RigidPose(theta=0, phi=0, psi=0, x=0, y=0, z=3))
        with pytest.raises(LengthMismatch):
            reprojection_error(P, KeypointSet3D(np.zeros((3, 3))),
                               KeypointSet2D(np.zeros((4, 2))))


class TestGeodesicRotation:
    def test_identity_is_zero(self):
        assert rotation_geodesic_deg(np.eye(3), np.eye(3)) == 0.0

    def test_quarter_turn_is_ninety(self):
        R = rotation_matrix(RigidPose(theta=np.pi / 2, phi=0, psi=0,
                                      x=0, y=0, z=0))
        assert rotation_geodesic_deg(np.eye(3), R) == pytest.approx(90.0)

    def test_symmetric(self):
        a = rotation_matrix(RigidPose(theta=0.3, phi=0.2, psi=0.7,
                                      x=0, y=0, z=0))
        b = rotation_matrix(RigidPose(theta=-0.5, phi=0.4, psi=0.1,
                                      x=0, y=0, z=0))
        assert rotation_geodesic_deg(a, b) == pytest.approx(
            rotation_geodesic_deg(b, a))


class TestKeypointSets:
    def test_default_visibility_all_true(self):
        ks = KeypointSet2D(np.zeros((5, 2)))
        assert ks.visibility.all() and len(ks) == 5

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            KeypointSet2D(np.array([[0.0, np.nan]]))
        with pytest.raises(ValueError):
            KeypointSet3D(np.array([[np.inf, 0.0, 0.0]]))

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            KeypointSet2D(np.zeros((4, 3)))
        with pytest.raises(LengthMismatch):
            KeypointSet2D(np.zeros((4, 2)), np.array([True, False]))


class TestCameraAndPoseValidation:
    def test_rejects_nonpositive_focal(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(f=0, w=640, h=480)
        with pytest.raises(ValueError):
            CameraIntrinsics(f=-100, w=640, h=480)

    def test_pose_vector_round_trip(self):
        pose = RigidPose(theta=0.1, phi=0.2, psi=0.3, x=1, y=2, z=3)
        np.testing.assert_array_equal(pose.as_vector(),
                                      [0.1, 0.2, 0.3, 1, 2, 3])
        assert RigidPose.from_vector(pose.as_vector()) == pose

    def test_projection_matrix_shape_enforced(self):
        with pytest.raises(ValueError):
            ProjectionMatrix(np.zeros((4, 3)))


class TestTriangleMesh:
    def test_tetrahedron_watertight_euler_two(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]],
                         dtype=float)
        faces = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
        mesh = TriangleMesh(verts, faces)
        assert mesh_is_watertight(mesh)
        assert mesh_euler_characteristic(mesh) == 2

    def test_open_fan_not_watertight(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]],
                         dtype=float)
        faces = np.array([[0, 1, 2], [1, 3, 2]])
        mesh = TriangleMesh(verts, faces)
        assert not mesh_is_watertight(mesh)

    def test_out_of_range_index_raises(self):
        verts = np.zeros((3, 3))
        with pytest.raises(IndexOutOfRange):
            TriangleMesh(verts, np.array([[0, 1, 5]]))

    def test_degenerate_face_raises(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
        with pytest.raises(DegenerateMesh):
            TriangleMesh(verts, np.array([[0, 1, 1]]))
