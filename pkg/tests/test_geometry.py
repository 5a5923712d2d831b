import numpy as np
import pytest

from rigview.errors import NonPositiveDepthError
from rigview.geometry import (
    Intrinsics,
    RigState,
    SE3Pose,
    camera_pose,
    pixel_rays,
    pose_difference,
    project,
    quat_from_axis_angle,
    se3_compose,
    se3_inverse,
    unproject,
)

K = Intrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


def random_pose(rng):
    axis = rng.normal(size=3)
    angle = rng.uniform(-np.pi, np.pi)
    return SE3Pose.from_axis_angle(axis, angle, rng.uniform(-5, 5, size=3))


class TestSE3Compose:
    def test_identity(self):
        rng = np.random.default_rng(0)
        t = random_pose(rng)
        out = se3_compose(SE3Pose.identity(), t)
        np.testing.assert_allclose(out.matrix(), t.matrix(), atol=1e-12)

    def test_inverse(self):
        rng = np.random.default_rng(1)
        t = random_pose(rng)
        out = se3_compose(t, se3_inverse(t))
        np.testing.assert_allclose(out.matrix(), np.eye(4), atol=1e-9)

    def test_z_rotation_example(self):
        # (90 deg about z, t=(1,0,0)) o (90 deg about z, t=(0,1,0))
        # = (180 deg about z, t=(1,0,0) + Rz(90)(0,1,0)) = (180 deg, (0,0,0))
        a = SE3Pose.from_axis_angle([0, 0, 1], np.pi / 2, (1, 0, 0))
        b = SE3Pose.from_axis_angle([0, 0, 1], np.pi / 2, (0, 1, 0))
        out = se3_compose(a, b)
        expected = SE3Pose.from_axis_angle([0, 0, 1], np.pi, (0, 0, 0))
        np.testing.assert_allclose(out.matrix(), expected.matrix(), atol=1e-12)

    def test_matrix_oracle_1000_random_pairs(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            a, b = random_pose(rng), random_pose(rng)
            out = se3_compose(a, b)
            np.testing.assert_allclose(out.matrix(), a.matrix() @ b.matrix(), atol=1e-9)

    def test_associativity(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b, c = random_pose(rng), random_pose(rng), random_pose(rng)
            lhs = se3_compose(se3_compose(a, b), c)
            rhs = se3_compose(a, se3_compose(b, c))
            np.testing.assert_allclose(lhs.matrix(), rhs.matrix(), atol=1e-9)

    def test_quaternion_stays_normalized(self):
        rng = np.random.default_rng(4)
        t = random_pose(rng)
        for _ in range(10000):
            t = se3_compose(t, SE3Pose.from_axis_angle([0, 0, 1], 1e-3))
        assert abs(np.linalg.norm(t.quat) - 1.0) < 1e-12


class TestProjection:
    def test_principal_point(self):
        np.testing.assert_allclose(project(K, np.array([0.0, 0.0, 1.0])), [50, 50])

    def test_hand_example(self):
        np.testing.assert_allclose(project(K, np.array([1.0, 0.0, 2.0])), [100, 50])

    def test_behind_camera_raises(self):
        with pytest.raises(NonPositiveDepthError):
            project(K, np.array([0.0, 0.0, -1.0]))

    def test_unproject_principal_ray(self):
        np.testing.assert_allclose(unproject(K, np.array([50.0, 50.0]), 1.0), [0, 0, 1])

    def test_unproject_inverse_of_example(self):
        np.testing.assert_allclose(unproject(K, np.array([100.0, 50.0]), 2.0), [1, 0, 2])

    def test_unproject_nonpositive_depth_raises(self):
        with pytest.raises(NonPositiveDepthError):
            unproject(K, np.array([50.0, 50.0]), 0.0)

    def test_round_trip_1000_random_pixels(self):
        rng = np.random.default_rng(5)
        px = rng.uniform(0, 99, size=(1000, 2))
        d = rng.uniform(0.1, 50, size=1000)
        back = project(K, unproject(K, px, d))
        np.testing.assert_allclose(back, px, atol=1e-9)


class TestCameraPose:
    def make_rig(self, rng, n_t=4, n_k=3):
        return RigState([random_pose(rng) for _ in range(n_t)],
                        [random_pose(rng) for _ in range(n_k)])

    def test_identity_delta(self):
        rng = np.random.default_rng(6)
        rig = self.make_rig(rng)
        rig.deltas[1] = SE3Pose.identity()
        out = camera_pose(rig, 2, 1)
        np.testing.assert_allclose(out.matrix(), rig.ego_poses[2].matrix(), atol=1e-12)

    def test_translation_example(self):
        rig = RigState([SE3Pose(np.array([1.0, 0, 0, 0]), np.array([1.0, 2.0, 3.0]))],
                       [SE3Pose(np.array([1.0, 0, 0, 0]), np.array([0.5, 0.0, 0.0]))])
        out = camera_pose(rig, 0, 0)
        np.testing.assert_allclose(out.trans, [1.5, 2, 3])

    def test_gauge_invariance(self):
        rng = np.random.default_rng(7)
        rig = self.make_rig(rng)
        g = random_pose(rng)
        g_inv = se3_inverse(g)
        transformed = RigState([se3_compose(e, g) for e in rig.ego_poses],
                               [se3_compose(g_inv, d) for d in rig.deltas])
        for i in range(rig.n_timestamps):
            for k in range(rig.n_cameras):
                rot_err, trans_err = pose_difference(camera_pose(rig, i, k),
                                                     camera_pose(transformed, i, k))
                assert rot_err < 1e-9
                assert trans_err < 1e-9

    def test_index_out_of_range(self):
        rng = np.random.default_rng(8)
        rig = self.make_rig(rng)
        with pytest.raises(IndexError):
            camera_pose(rig, rig.n_timestamps, 0)
        with pytest.raises(IndexError):
            camera_pose(rig, 0, rig.n_cameras)


class TestRays:
    def test_pixel_rays_match_unproject(self):
        rng = np.random.default_rng(9)
        pose = random_pose(rng)
        origins, dirs = pixel_rays(K, pose)
        assert origins.shape == (100, 100, 3)
        np.testing.assert_allclose(np.linalg.norm(dirs, axis=-1), 1.0, atol=1e-12)
        # A point one unit of depth along the pixel (30, 70) ray reprojects there.
        p_world = pose.apply(unproject(K, np.array([30.0, 70.0]), 1.0))
        d = p_world - origins[70, 30]
        np.testing.assert_allclose(d / np.linalg.norm(d), dirs[70, 30], atol=1e-12)


class TestValidation:
    def test_bad_quaternion_rejected(self):
        with pytest.raises(ValueError):
            SE3Pose(np.array([1.0, 1.0, 0.0, 0.0]), np.zeros(3))

    def test_bad_intrinsics_rejected(self):
        with pytest.raises(ValueError):
            Intrinsics(fx=-1.0, fy=1.0, cx=0.0, cy=0.0, width=10, height=10)
        with pytest.raises(ValueError):
            Intrinsics(fx=1.0, fy=1.0, cx=20.0, cy=0.0, width=10, height=10)

    def test_axis_angle_quaternion(self):
        q = quat_from_axis_angle(np.array([0.0, 0.0, 2.0]), np.pi / 2)
        np.testing.assert_allclose(q, [np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)])
