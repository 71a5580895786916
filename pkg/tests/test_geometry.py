import math

import numpy as np
import pytest
import torch

from viewsynth.geometry import (CameraIntrinsics, PixelGrid, Pose, compose, invert,
                                load_intrinsics, load_pose, project_pixels,
                                rotation_about_axis, save_intrinsics, save_pose,
                                transform_latent)

from conftest import random_pose, random_rotation, smooth_map


class TestPoseValidation:
    def test_identity_is_valid(self):
        p = Pose.identity()
        assert torch.equal(p.rotation, torch.eye(3, dtype=torch.float64))

    def test_non_orthonormal_rejected(self):
        with pytest.raises(ValueError, match="orthonormal"):
            Pose(np.eye(3) * 1.1, np.zeros(3))

    def test_reflection_rejected(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError, match="determinant"):
            Pose(r, np.zeros(3))

    def test_non_finite_rejected(self):
        r = np.eye(3)
        r[0, 0] = np.nan
        with pytest.raises(ValueError):
            Pose(r, np.zeros(3))

    def test_matrix_round_trip(self):
        rng = np.random.default_rng(3)
        p = random_pose(rng)
        q = Pose.from_matrix(p.matrix())
        assert torch.allclose(p.rotation, q.rotation)
        assert torch.allclose(p.translation, q.translation)


class TestTransformLatent:
    def test_identity(self):
        z = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
        out = transform_latent(z, Pose.identity())
        assert torch.equal(out, z)

    def test_rotation_90_about_z(self):
        # independent matrix-multiply oracle: R @ (1,0,0) = (0,1,0)
        r = rotation_about_axis([0, 0, 1], math.pi / 2)
        z = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
        out = transform_latent(z, Pose(r, np.zeros(3)))
        expected = (r.numpy() @ np.array([1.0, 0.0, 0.0])).reshape(1, 3)
        assert np.allclose(out.numpy(), expected, atol=1e-12)
        assert np.allclose(out.numpy(), [[0.0, 1.0, 0.0]], atol=1e-12)

    def test_composition_equals_composed_pose(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            z = torch.tensor(rng.normal(size=(16, 3)))
            t1, t2 = random_pose(rng), random_pose(rng)
            a = transform_latent(transform_latent(z, t1), t2)
            b = transform_latent(z, compose(t2, t1))
            # oracle: the 4x4 homogeneous matrix product applied point-wise
            m = (t2.matrix() @ t1.matrix()).numpy()
            zh = np.concatenate([z.numpy(), np.ones((16, 1))], axis=1)
            oracle = (m @ zh.T).T[:, :3]
            assert np.allclose(a.numpy(), oracle, atol=1e-6)
            assert np.allclose(a.numpy(), b.numpy(), atol=1e-6)

    def test_rigidity_preserves_pairwise_distances(self):
        rng = np.random.default_rng(11)
        z = torch.tensor(rng.normal(size=(32, 3)))
        out = transform_latent(z, random_pose(rng))
        d_in = torch.cdist(z, z)
        d_out = torch.cdist(out, out)
        assert (d_in - d_out).abs().max() < 1e-5

    def test_input_unmodified_and_differentiable(self):
        z = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
        snapshot = z.detach().clone()
        rng = np.random.default_rng(2)
        out = transform_latent(z, random_pose(rng))
        out.sum().backward()
        assert torch.equal(z.detach(), snapshot)
        assert z.grad is not None and torch.isfinite(z.grad).all()

    def test_batched(self):
        rng = np.random.default_rng(5)
        poses = [random_pose(rng) for _ in range(3)]
        z = torch.tensor(rng.normal(size=(3, 8, 3)))
        out = transform_latent(z, Pose.stack(poses))
        for i, p in enumerate(poses):
            assert torch.allclose(out[i], transform_latent(z[i], p))

    def test_bad_shape(self):
        with pytest.raises(ValueError, match="N,3"):
            transform_latent(torch.zeros(4, 4), Pose.identity())


class TestComposeInvert:
    def test_compose_identity(self):
        rng = np.random.default_rng(13)
        t = random_pose(rng)
        out = compose(Pose.identity(), t)
        assert torch.allclose(out.matrix(), t.matrix())

    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(17)
        t = random_pose(rng)
        out = compose(t, invert(t))
        assert torch.allclose(out.matrix(), Pose.identity().matrix(), atol=1e-12)

    def test_compose_matches_matrix_product(self):
        rng = np.random.default_rng(19)
        t1 = Pose(random_rotation(rng), rng.normal(size=3))
        t2 = Pose(random_rotation(rng), rng.normal(size=3))
        assert torch.allclose(compose(t2, t1).matrix(), t2.matrix() @ t1.matrix(), atol=1e-12)

    def test_invert_identity(self):
        assert torch.allclose(invert(Pose.identity()).matrix(), Pose.identity().matrix())

    def test_invert_involution(self):
        rng = np.random.default_rng(23)
        t = random_pose(rng)
        back = invert(invert(t))
        assert torch.allclose(back.matrix(), t.matrix(), atol=1e-9)

    def test_invert_matches_matrix_inverse(self):
        rng = np.random.default_rng(29)
        t = random_pose(rng)
        assert torch.allclose(invert(t).matrix(), torch.linalg.inv(t.matrix()), atol=1e-9)


class TestProjectPixels:
    def test_identity_returns_grid_exactly(self):
        rng = np.random.default_rng(31)
        depth = torch.tensor(smooth_map(rng, 6, 7))
        k = CameraIntrinsics(2.0, 3.0, 3.0, 2.5)
        proj = project_pixels(depth, k, Pose.identity())
        expected = PixelGrid(7, 6).coords()
        assert (proj.coords - expected).abs().max() < 1e-12
        assert proj.mask.all()

    def test_pure_translation_hand_case(self):
        # fx=fy=1, cx=cy=0, pixel (0,0), depth 1, t=(1,0,0): camera point
        # (0,0,1) moves to (1,0,1) and projects to (1,0)
        depth = torch.ones(4, 4, dtype=torch.float64)
        k = CameraIntrinsics(1.0, 1.0, 0.0, 0.0)
        proj = project_pixels(depth, k, Pose(np.eye(3), [1.0, 0.0, 0.0]))
        assert torch.allclose(proj.coords[0, 0], torch.tensor([1.0, 0.0], dtype=torch.float64))

    def test_depth_translation_hand_case(self):
        # pixel (2,2), depth 2, t=(0,0,-1): camera point (4,4,2) -> (4,4,1) -> (4,4)
        depth = torch.full((6, 6), 2.0, dtype=torch.float64)
        k = CameraIntrinsics(1.0, 1.0, 0.0, 0.0)
        proj = project_pixels(depth, k, Pose(np.eye(3), [0.0, 0.0, -1.0]))
        assert torch.allclose(proj.coords[2, 2], torch.tensor([4.0, 4.0], dtype=torch.float64))
        assert torch.allclose(proj.depth[0, 2, 2], torch.tensor(1.0, dtype=torch.float64))

    def test_behind_camera_masked_without_nan(self):
        depth = torch.ones(3, 3, dtype=torch.float64)
        k = CameraIntrinsics(1.0, 1.0, 1.0, 1.0)
        proj = project_pixels(depth, k, Pose(np.eye(3), [0.0, 0.0, -5.0]))
        assert not proj.mask.any()
        assert torch.isfinite(proj.coords).all()
        assert (proj.coords < 0).all()

    def test_zero_depth_clamped_not_divided(self):
        depth = torch.zeros(3, 3, dtype=torch.float64)
        k = CameraIntrinsics(1.0, 1.0, 1.0, 1.0)
        proj = project_pixels(depth, k, Pose.identity())
        assert torch.isfinite(proj.coords).all()

    def test_scale_consistency(self):
        rng = np.random.default_rng(37)
        depth = torch.tensor(smooth_map(rng, 8, 8))
        k = CameraIntrinsics(5.0, 5.0, 3.5, 3.5)
        pose = random_pose(rng, max_angle_rad=0.3, max_trans=0.5)
        lam = 3.7
        scaled = Pose(pose.rotation, pose.translation * lam)
        a = project_pixels(depth, k, pose)
        b = project_pixels(depth * lam, k, scaled)
        assert (a.coords - b.coords).abs().max() < 1e-5
        assert torch.equal(a.mask, b.mask)

    def test_gradient_wrt_depth_matches_finite_differences(self):
        rng = np.random.default_rng(41)
        depth = torch.tensor(smooth_map(rng, 8, 8), requires_grad=True)
        k = CameraIntrinsics(4.0, 4.0, 3.5, 3.5)
        pose = random_pose(rng, max_angle_rad=0.2, max_trans=0.3)

        def f(d):
            proj = project_pixels(d, k, pose)
            return (proj.coords * proj.mask.squeeze(0).unsqueeze(-1)).sum()

        f(depth).backward()
        grad = depth.grad.clone()
        h = 1e-6
        checked = passed = 0
        with torch.no_grad():
            for v in range(0, 8, 3):
                for u in range(0, 8, 3):
                    d = depth.detach().clone()
                    d[v, u] += h
                    up = f(d)
                    d[v, u] -= 2 * h
                    down = f(d)
                    fd = (up - down) / (2 * h)
                    denom = max(abs(fd.item()), abs(grad[v, u].item()), 1e-8)
                    checked += 1
                    passed += abs(fd.item() - grad[v, u].item()) / denom < 1e-3
        assert passed == checked

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(43)
        depths = torch.tensor(np.stack([smooth_map(rng, 5, 5) for _ in range(2)]))[:, None]
        poses = [random_pose(rng, 0.4, 0.4) for _ in range(2)]
        k = CameraIntrinsics(3.0, 3.0, 2.0, 2.0)
        batched = project_pixels(depths, k, Pose.stack(poses))
        for i in range(2):
            single = project_pixels(depths[i, 0], k, poses[i])
            assert torch.allclose(batched.coords[i], single.coords)
            assert torch.equal(batched.mask[i], single.mask)


class TestPixelGrid:
    def test_coords_in_range(self):
        g = PixelGrid(5, 3)
        c = g.coords()
        assert c.shape == (3, 5, 2)
        assert c[..., 0].max() == 4 and c[..., 1].max() == 2

    def test_homogeneous_last_row(self):
        assert (PixelGrid(4, 4).homogeneous()[..., 2] == 1).all()

    def test_invalid_size(self):
        with pytest.raises(ValueError):
            PixelGrid(0, 3)


class TestFileFormats:
    def test_pose_round_trip(self, tmp_path):
        rng = np.random.default_rng(47)
        p = random_pose(rng)
        path = tmp_path / "pose.txt"
        save_pose(p, path)
        q = load_pose(path)
        assert torch.allclose(p.matrix(), q.matrix(), atol=1e-12)

    def test_intrinsics_round_trip(self, tmp_path):
        k = CameraIntrinsics(100.0, 101.0, 64.0, 63.0)
        path = tmp_path / "k.txt"
        save_intrinsics(k, path)
        k2 = load_intrinsics(path)
        assert torch.equal(k.matrix(), k2.matrix())

    def test_malformed_pose_reports_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1 0 0 0\n0 1 0 zero\n0 0 1 0\n0 0 0 1\n")
        with pytest.raises(ValueError, match="line 2"):
            load_pose(path)

    def test_wrong_count_reports_line(self, tmp_path):
        path = tmp_path / "short.txt"
        path.write_text("1 0 0\n0 1 0\n")
        with pytest.raises(ValueError, match="line"):
            load_pose(path)


class TestIntrinsics:
    def test_scaled_divides_everything(self):
        k = CameraIntrinsics(100.0, 80.0, 64.0, 32.0).scaled(4.0)
        assert k.fx == 25.0 and k.fy == 20.0 and k.cx == 16.0 and k.cy == 8.0

    def test_negative_focal_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            CameraIntrinsics(-1.0, 1.0, 0.0, 0.0)

    def test_matrix_round_trip(self):
        k = CameraIntrinsics(10.0, 12.0, 5.0, 4.0)
        k2 = CameraIntrinsics.from_matrix(k.matrix())
        assert torch.equal(k.matrix(), k2.matrix())
