import numpy as np
import pytest

from plrefine.geometry import CameraModel, DepthImage, PointCloud, Pose, rasterize_depth


def random_pose(rng):
    # QR of a random matrix gives a uniform-ish orthonormal basis
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return Pose(q, rng.normal(scale=2.0, size=3))


class TestPose:
    def test_identity_transform(self):
        p = Pose.identity().apply([1.0, 2.0, 3.0])
        assert np.allclose(p, [1.0, 2.0, 3.0])

    def test_pure_translation(self):
        pose = Pose(np.eye(3), [0.0, 0.0, 5.0])
        assert np.allclose(pose.apply([1.0, 2.0, 3.0]), [1.0, 2.0, 8.0])

    def test_yaw_90_degrees(self):
        # hand-computed: Rz(90) @ (1,0,0) = (0,1,0)
        pose = Pose.from_yaw(np.pi / 2)
        assert np.allclose(pose.apply([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)

    def test_compose_identity(self):
        rng = np.random.default_rng(11)
        p = random_pose(rng)
        c = Pose.identity().compose(p)
        assert np.allclose(c.rotation, p.rotation)
        assert np.allclose(c.translation, p.translation)

    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(12)
        p = random_pose(rng)
        c = p.compose(p.inverse())
        assert np.max(np.abs(c.rotation - np.eye(3))) < 1e-9
        assert np.max(np.abs(c.translation)) < 1e-9

    def test_compose_two_translations(self):
        a = Pose(np.eye(3), [1.0, 0.0, 0.0])
        b = Pose(np.eye(3), [0.0, 2.0, 0.0])
        assert np.allclose(a.compose(b).translation, [1.0, 2.0, 0.0])

    def test_compose_applies_right_operand_first(self):
        rng = np.random.default_rng(13)
        a, b = random_pose(rng), random_pose(rng)
        p = rng.normal(size=3)
        assert np.allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-12)

    def test_invert_identity_and_translation(self):
        inv = Pose.identity().inverse()
        assert np.allclose(inv.rotation, np.eye(3))
        assert np.allclose(inv.translation, 0.0)
        t = Pose(np.eye(3), [1.0, 2.0, 3.0]).inverse()
        assert np.allclose(t.translation, [-1.0, -2.0, -3.0])

    def test_invert_round_trip_100_random_points(self):
        rng = np.random.default_rng(14)
        pose = random_pose(rng)
        pts = rng.normal(scale=5.0, size=(100, 3))
        back = pose.inverse().apply(pose.apply(pts))
        assert np.max(np.abs(back - pts)) < 1e-9

    def test_rigidity_preserves_pairwise_distances(self):
        rng = np.random.default_rng(15)
        pose = random_pose(rng)
        pts = rng.normal(scale=3.0, size=(40, 3))
        moved = pose.apply(pts)
        d0 = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
        d1 = np.linalg.norm(moved[:, None] - moved[None, :], axis=2)
        assert np.max(np.abs(d0 - d1)) < 1e-9

    def test_compose_associative(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            a, b, c = (random_pose(rng) for _ in range(3))
            left = a.compose(b).compose(c)
            right = a.compose(b.compose(c))
            assert np.max(np.abs(left.rotation - right.rotation)) < 1e-9
            assert np.max(np.abs(left.translation - right.translation)) < 1e-9

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 1.1, np.zeros(3))

    def test_rejects_reflection(self):
        R = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            Pose(R, np.zeros(3))


class TestProjection:
    def test_optical_axis(self):
        cam = CameraModel(fx=1, fy=1, cx=0, cy=0, width=10, height=10)
        assert cam.project_point([0.0, 0.0, 1.0]) == (0.0, 0.0, 1.0)

    def test_hand_evaluated_projection(self):
        # u = 100*0.5/1 + 50 = 100, v = 50, s = 1
        cam = CameraModel(fx=100, fy=100, cx=50, cy=50, width=200, height=200)
        assert cam.project_point([0.5, 0.0, 1.0]) == (100.0, 50.0, 1.0)

    def test_behind_camera_is_rejected(self):
        cam = CameraModel(fx=100, fy=100, cx=50, cy=50, width=200, height=200)
        assert cam.project_point([0.0, 0.0, -1.0]) is None

    def test_out_of_view_is_rejected(self):
        cam = CameraModel(fx=100, fy=100, cx=50, cy=50, width=100, height=100)
        assert cam.project_point([2.0, 0.0, 1.0]) is None

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(21)
        cam = CameraModel(
            fx=90, fy=110, cx=80, cy=60, width=160, height=120,
            extrinsic=random_pose(rng),
        )
        pts = rng.normal(scale=4.0, size=(200, 3))
        uv, s, valid = cam.project(pts)
        for i, p in enumerate(pts):
            single = cam.project_point(p)
            if single is None:
                assert not valid[i]
            else:
                assert valid[i]
                assert np.allclose(uv[i], single[:2])
                assert np.isclose(s[i], single[2])


class TestBackprojection:
    def test_all_zero_depth_gives_empty_cloud(self):
        cam = CameraModel(fx=50, fy=50, cx=20, cy=15, width=40, height=30)
        cloud = cam.backproject(DepthImage(40, 30, np.zeros((30, 40))))
        assert len(cloud) == 0

    def test_constant_depth_plane(self):
        cam = CameraModel(fx=50, fy=50, cx=20, cy=15, width=40, height=30)
        cloud = cam.backproject(DepthImage(40, 30, np.ones((30, 40))))
        assert len(cloud) == 40 * 30
        assert np.allclose(cloud.points[:, 2], 1.0)

    def test_dimension_mismatch_rejected(self):
        cam = CameraModel(fx=50, fy=50, cx=20, cy=15, width=40, height=30)
        with pytest.raises(ValueError):
            cam.backproject(DepthImage(30, 40, np.ones((40, 30))))

    def test_row_major_output_order(self):
        cam = CameraModel(fx=50, fy=50, cx=2, cy=1, width=4, height=3)
        depth = np.zeros((3, 4))
        depth[0, 1] = 1.0
        depth[2, 3] = 2.0
        cloud = cam.backproject(DepthImage(4, 3, depth))
        # pixel (u=1, v=0) comes before (u=3, v=2)
        assert np.isclose(cloud.points[0][2], 1.0)
        assert np.isclose(cloud.points[1][2], 2.0)

    def test_round_trip_1000_random_pixels(self):
        rng = np.random.default_rng(22)
        cam = CameraModel(
            fx=120, fy=95, cx=81.5, cy=59.5, width=160, height=120,
            extrinsic=random_pose(rng),
        )
        depth = np.zeros((120, 160))
        us = rng.integers(0, 160, size=1000)
        vs = rng.integers(0, 120, size=1000)
        depth[vs, us] = rng.uniform(0.5, 30.0, size=1000)
        img = DepthImage(160, 120, depth)
        cloud = cam.backproject(img)
        uv, s, valid = cam.project(cloud.points)
        assert valid.all()
        vv, uu = np.nonzero(depth > 0)
        assert np.max(np.abs(uv[:, 0] - uu)) < 1e-6
        assert np.max(np.abs(uv[:, 1] - vv)) < 1e-6
        assert np.max(np.abs(s - depth[vv, uu])) < 1e-9


class TestDepthImage:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            DepthImage(2, 2, np.array([[0.0, -1.0], [0.0, 0.0]]))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            DepthImage(2, 2, np.array([[0.0, np.nan], [0.0, 0.0]]))

    def test_flat_data_reshaped(self):
        img = DepthImage(3, 2, np.arange(6, dtype=float))
        assert img.data.shape == (2, 3)

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            DepthImage(3, 2, np.arange(5, dtype=float))


class TestPointCloud:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[0.0, 0.0, np.inf]]))

    def test_empty(self):
        assert len(PointCloud.empty()) == 0


def test_rasterize_depth_round_trip():
    cam = CameraModel(fx=60, fy=60, cx=32, cy=24, width=64, height=48)
    depth = np.zeros((48, 64))
    depth[10:30, 20:40] = 3.0
    img = DepthImage(64, 48, depth)
    back = rasterize_depth(cam, cam.backproject(img))
    assert np.allclose(back.data, depth)


def test_rasterize_depth_keeps_nearest():
    cam = CameraModel(fx=60, fy=60, cx=32, cy=24, width=64, height=48)
    near = np.array([[0.0, 0.0, 2.0]])
    far = np.array([[0.0, 0.0, 5.0]])
    img = rasterize_depth(cam, PointCloud(np.vstack([far, near])))
    assert img.data[24, 32] == 2.0
