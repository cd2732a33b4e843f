import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import K, points_in_view, random_rotation
from vsslam.backend.pnp import RansacParams, p3p_solve, pnp_ransac, refine_pose
from vsslam.exceptions import TrackingFailure
from vsslam.geometry import Pose, rotation_angle


def recover_error(poses, R, t):
    if not poses:
        return np.inf
    return min(max(np.abs(p.rotation - R).max(), np.abs(p.translation - t).max()) for p in poses)


class TestP3P:
    def test_single_synthesis(self, rng):
        R, t = random_rotation(rng), rng.normal(size=3)
        P, uv = points_in_view(rng, R, t, 3)
        poses = p3p_solve(P, uv, K)
        assert 1 <= len(poses) <= 4
        assert recover_error(poses, R, t) < 1e-6
        for p in poses:
            pc = P @ p.rotation.T + p.translation
            proj = pc[:, :2] / pc[:, 2:3] * 500 + [320, 240]
            assert np.abs(proj - uv).max() < 1e-6

    def test_collinear_empty(self):
        P = np.array([[0, 0, 4.0], [1, 0, 4.0], [2, 0, 4.0]])
        uv = np.array([[320, 240], [445, 240], [570, 240.0]])
        assert p3p_solve(P, uv, K) == []
        assert p3p_solve(np.array([[0, 0, 4.0]] * 3), uv, K) == []

    @given(st.integers(0, 2**32 - 1))
    def test_recovery_property(self, seed):
        rng = np.random.default_rng(seed)
        R, t = random_rotation(rng), rng.normal(size=3) * 2
        P, uv = points_in_view(rng, R, t, 3)
        assert recover_error(p3p_solve(P, uv, K), R, t) < 1e-5


class TestRansac:
    def test_fifty_inliers_twenty_outliers(self, rng):
        R, t = random_rotation(rng), rng.normal(size=3)
        P, uv = points_in_view(rng, R, t, 50)
        out_P, _ = points_in_view(rng, R, t, 20)
        out_uv = np.column_stack([rng.uniform(0, 639, 20), rng.uniform(0, 479, 20)])
        res = pnp_ransac(np.vstack([P, out_P]), np.vstack([uv, out_uv]), K,
                         rng=np.random.default_rng(1))
        assert np.degrees(rotation_angle(res.pose.rotation @ R.T)) < 0.1
        assert np.linalg.norm(res.pose.translation - t) < 1e-3
        assert set(range(50)) <= set(res.inliers.tolist())
        assert len(res.inliers) <= 50 + 2  # a stray outlier may land within threshold

    def test_all_outliers_fail(self, rng):
        P = rng.normal(size=(60, 3)) + [0, 0, 5]
        uv = np.column_stack([rng.uniform(0, 639, 60), rng.uniform(0, 479, 60)])
        with pytest.raises(TrackingFailure):
            pnp_ransac(P, uv, K, RansacParams(max_iterations=100), np.random.default_rng(0))

    def test_too_few_correspondences(self, rng):
        R, t = random_rotation(rng), rng.normal(size=3)
        P, uv = points_in_view(rng, R, t, 10)
        with pytest.raises(TrackingFailure):
            pnp_ransac(P, uv, K)

    def test_noiseless_refinement_fixed_point(self, rng):
        R, t = random_rotation(rng), rng.normal(size=3)
        P, uv = points_in_view(rng, R, t, 40)
        res = pnp_ransac(P, uv, K, rng=np.random.default_rng(3))
        assert np.abs(res.pose.rotation - res.p3p_pose.rotation).max() < 1e-9
        assert np.abs(res.pose.translation - res.p3p_pose.translation).max() < 1e-9

    def test_refinement_reduces_noise_error(self, rng):
        R, t = random_rotation(rng), rng.normal(size=3)
        P, uv = points_in_view(rng, R, t, 200)
        noisy = uv + rng.normal(size=uv.shape) * 0.5
        R0 = R @ np.array([[1, -0.01, 0], [0.01, 1, 0], [0, 0, 1.0]])
        R1, t1 = refine_pose(R0, t + 0.01, P, noisy, K)
        assert np.linalg.norm(t1 - t) < 0.01

    def test_seeded_reproducible(self, rng):
        R, t = random_rotation(rng), rng.normal(size=3)
        P, uv = points_in_view(rng, R, t, 60)
        uv[:20] = rng.uniform(0, 400, (20, 2))
        a = pnp_ransac(P, uv, K, rng=np.random.default_rng(5))
        b = pnp_ransac(P, uv, K, rng=np.random.default_rng(5))
        assert np.array_equal(a.pose.matrix(), b.pose.matrix())
        assert np.array_equal(a.inliers, b.inliers)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            RansacParams(min_inliers=3)
        with pytest.raises(ValueError):
            RansacParams(confidence=1.0)
