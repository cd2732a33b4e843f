import numpy as np
import pytest
from hypothesis import given, strategies as st

from vsslam.dataset_io import InstanceMask, make_keypoints
from vsslam.frontend import (FrontEnd, FrontEndConfig, associate_depth, build_dynamic_mask,
                             default_dilation_radius, filter_static, process_frame,
                             select_features)
from vsslam.geometry import CameraIntrinsics, project
from vsslam.morphology import dilate
from vsslam.sensors import SensorFrame

K = CameraIntrinsics(100.0, 100.0, 19.5, 14.5, 40, 30)


def kp(uv, response=None, seed=0):
    uv = np.asarray(uv, float).reshape(-1, 2)
    desc = np.random.default_rng(seed).integers(0, 256, (len(uv), 32), dtype=np.uint8)
    return make_keypoints(uv, desc, response=response)


def random_keypoints(rng, n, w=40, h=30):
    return kp(np.column_stack([rng.uniform(0, w - 1, n), rng.uniform(0, h - 1, n)]),
              rng.integers(0, 5, n).astype(np.float32), int(rng.integers(1 << 30)))


class TestSelectFeatures:
    def test_fewer_than_budget(self, rng):
        c = random_keypoints(rng, 10)
        assert select_features(c, 1000, (8, 8), 40, 30).tobytes() == c.tobytes()

    def test_one_per_cell(self):
        # 3 candidates in each quadrant of a 40x30 image
        uv, resp = [], []
        for cx, cy in ((5, 5), (25, 5), (5, 20), (25, 20)):
            for j in range(3):
                uv.append((cx + j, cy))
                resp.append(float(j + 1 + cx / 100))
        c = kp(uv, np.array(resp, np.float32))
        out = select_features(c, 4, (2, 2), 40, 30)
        assert len(out) == 4
        np.testing.assert_array_equal(out["u"], [7, 27, 7, 27])

    def test_ties_deterministic(self, rng):
        c = kp(rng.uniform(0, 29, (200, 2)), np.ones(200, np.float32))
        a = select_features(c, 37, (3, 3), 40, 30)
        b = select_features(c.copy(), 37, (3, 3), 40, 30)
        assert a.tobytes() == b.tobytes() and len(a) == 37

    def test_tie_break_prefers_smaller_v_then_u(self):
        c = kp([(10, 9), (12, 3), (5, 3)], np.ones(3, np.float32))
        out = select_features(c, 1, (1, 1), 40, 30)
        assert (out["u"][0], out["v"][0]) == (5, 3)

    @given(st.integers(0, 10_000), st.integers(1, 80), st.integers(1, 5), st.integers(1, 5))
    def test_budget_and_quota(self, seed, budget, gx, gy):
        rng = np.random.default_rng(seed)
        c = random_keypoints(rng, int(rng.integers(0, 150)))
        out = select_features(c, budget, (gx, gy), 40, 30)
        assert len(out) <= budget
        assert len(out) == min(len(c), budget) or len(out) < budget
        quota = -(-budget // (gx * gy))
        cell = (np.clip((out["v"] * gy / 30).astype(int), 0, gy - 1) * gx
                + np.clip((out["u"] * gx / 40).astype(int), 0, gx - 1))
        if len(out):
            assert np.bincount(cell).max() <= quota


class TestDynamicMask:
    def masks(self):
        ids = np.zeros((5, 6), np.uint16)
        ids[1, 1:4] = 1
        ids[3, 3] = 2
        return InstanceMask(ids, ((1, 4), (2, 9)))

    def test_empty_class_set(self):
        assert not build_dynamic_mask(self.masks(), ()).any()

    def test_three_pixel_instance(self):
        m = build_dynamic_mask(self.masks(), (4,))
        assert m.sum() == 3 and m[1, 1:4].all()

    def test_other_class_ignored(self):
        assert build_dynamic_mask(self.masks(), (7,)).sum() == 0
        assert build_dynamic_mask(self.masks(), (4, 9)).sum() == 4


class TestDilate:
    def test_radius_zero(self, rng):
        m = rng.random((20, 20)) < 0.1
        assert np.array_equal(dilate(m, 0), m)

    def test_single_pixel_radius_two(self):
        m = np.zeros((11, 11), bool)
        m[5, 5] = True
        assert dilate(m, 2).sum() == 13

    def test_border_clamp(self):
        m = np.zeros((5, 5), bool)
        m[0, 0] = True
        assert dilate(m, 2).sum() == 6

    @given(st.integers(0, 2**31), st.integers(0, 6))
    def test_brute_force_and_laws(self, seed, r):
        rng = np.random.default_rng(seed)
        a = rng.random((15, 17)) < 0.05
        b = rng.random((15, 17)) < 0.05
        da = dilate(a, r)
        ys, xs = np.nonzero(a)
        yy, xx = np.mgrid[0:15, 0:17]
        ref = np.zeros_like(a)
        for y, x in zip(ys, xs):
            ref |= (yy - y) ** 2 + (xx - x) ** 2 <= r * r
        assert np.array_equal(da, ref)
        assert np.all(da[a])
        assert np.array_equal(dilate(a | b, r), da | dilate(b, r))

    def test_default_radius_scales_with_diagonal(self):
        assert default_dilation_radius(640, 480) == 10
        assert default_dilation_radius(320, 240) == 5


class TestFilterStatic:
    def test_all_zero_and_all_one(self, rng):
        f = random_keypoints(rng, 12)
        assert filter_static(f, np.zeros((30, 40), bool)).tobytes() == f.tobytes()
        assert len(filter_static(f, np.ones((30, 40), bool))) == 0

    def test_two_of_five_removed(self):
        f = kp([(1, 1), (5.4, 5.6), (10, 10), (20, 3), (30.5, 20.2)])
        mask = np.zeros((30, 40), bool)
        mask[6, 5] = True     # (5.4, 5.6) rounds to (5, 6)
        mask[20, 31] = True   # (30.5, 20.2) rounds to (31, 20)
        out = filter_static(f, mask)
        np.testing.assert_array_equal(out["u"], [1, 10, 20])

    @given(st.integers(0, 2**31))
    def test_set_algebra(self, seed):
        rng = np.random.default_rng(seed)
        f = random_keypoints(rng, 50)
        mask = dilate(rng.random((30, 40)) < 0.02, int(rng.integers(0, 4)))
        out = filter_static(f, mask)
        keep = [not mask[int(np.floor(v + 0.5)), int(np.floor(u + 0.5))]
                for u, v in zip(f["u"], f["v"])]
        assert out.tobytes() == f[np.array(keep, bool)].tobytes()


class TestAssociateDepth:
    def test_principal_point(self):
        k = CameraIntrinsics(100.0, 100.0, 20.0, 15.0, 40, 30)
        depth = np.full((30, 40), 2.0, np.float32)
        out = associate_depth(kp([(20, 15)]), depth, 0.3, 7.5, k)
        np.testing.assert_array_equal(out.points, [[0, 0, 2.0]])

    def test_out_of_range_and_invalid_demoted(self):
        depth = np.full((30, 40), 9.0, np.float32)
        depth[:, :20] = 0.0
        out = associate_depth(kp([(30, 10), (5, 10)]), depth, 0.3, 7.5, K)
        assert out.n_scaled == 0 and out.n_mono == 2

    def test_bad_range(self):
        with pytest.raises(ValueError):
            associate_depth(kp([(1, 1)]), np.ones((30, 40), np.float32), 2.0, 1.0, K)

    @given(st.integers(0, 2**31))
    def test_reprojection_bound(self, seed):
        rng = np.random.default_rng(seed)
        f = random_keypoints(rng, 40)
        depth = rng.uniform(0.1, 9, (30, 40)).astype(np.float32)
        out = associate_depth(f, depth, 0.3, 7.5, K)
        assert out.n_scaled + out.n_mono == 40
        np.testing.assert_array_equal(out.points[:, 2], out.depths)
        assert np.all((out.depths >= 0.3) & (out.depths <= 7.5))
        if out.n_scaled:
            uv = project(out.points, K)
            assert np.abs(uv - out.pixels).max() < 1e-9
            nearest = np.floor(out.pixels + 0.5)
            assert np.abs(nearest - out.pixels).max() <= 0.5


def frame_with_object(rng):
    ids = np.zeros((30, 40), np.uint16)
    ids[10:20, 10:20] = 1
    static = np.column_stack([rng.uniform(25, 39, 20), rng.uniform(0, 29, 20)])
    dyn = np.column_stack([rng.uniform(11, 18, 6), rng.uniform(11, 18, 6)])
    keypoints = kp(np.concatenate([static, dyn]))
    depth = np.full((30, 40), 3.0, np.float32)
    return SensorFrame(0.5, keypoints, depth, InstanceMask(ids, ((1, 1),)))


class TestProcessFrame:
    def test_no_dynamics_all_valid(self, rng):
        f = random_keypoints(rng, 30)
        frame = SensorFrame(0.0, f, np.full((30, 40), 2.0, np.float32), InstanceMask.empty(40, 30))
        out = process_frame(frame, FrontEndConfig(budget=20), K)
        assert out.n_scaled == 20

    def test_all_inside_instance(self, rng):
        ids = np.ones((30, 40), np.uint16)
        frame = SensorFrame(0.0, random_keypoints(rng, 15), np.full((30, 40), 2.0, np.float32),
                            InstanceMask(ids, ((1, 1),)))
        assert len(process_frame(frame, FrontEndConfig(), K)) == 0

    def test_masking_switch_difference(self, rng):
        frame = frame_with_object(rng)
        on = process_frame(frame, FrontEndConfig(dilation_radius_px=1), K)
        off = process_frame(frame, FrontEndConfig(masking=False), K)
        assert off.n_scaled == 26 and on.n_scaled == 20
        on_set = {tuple(p) for p in on.pixels}
        dropped = [tuple(p) for p in off.pixels if tuple(p) not in on_set]
        assert len(dropped) == 6
        assert all(10.5 <= u < 19.5 and 10.5 <= v < 19.5 for u, v in dropped)

    def test_deterministic(self, rng):
        frame = frame_with_object(rng)
        a = process_frame(frame, FrontEndConfig(), K)
        b = process_frame(frame, FrontEndConfig(), K)
        assert np.array_equal(a.points, b.points) and np.array_equal(a.descriptors, b.descriptors)

    @given(st.integers(0, 2**31))
    def test_radius_monotone(self, seed):
        rng = np.random.default_rng(seed)
        ids = np.zeros((30, 40), np.uint16)
        y, x = rng.integers(0, 25), rng.integers(0, 35)
        ids[y:y + 5, x:x + 5] = 1
        frame = SensorFrame(0.0, random_keypoints(rng, 60), np.full((30, 40), 2.0, np.float32),
                            InstanceMask(ids, ((1, 1),)))
        counts = [len(process_frame(frame, FrontEndConfig(dilation_radius_px=r), K))
                  for r in range(0, 12, 2)]
        assert all(a >= b for a, b in zip(counts, counts[1:]))


class TestEstimator:
    def test_fit_transform(self, rng):
        fe = FrontEnd(budget=50, dilation_radius_px=2, grid_x=1, grid_y=1).fit(intrinsics=K)
        frame = frame_with_object(rng)
        assert fe.transform([frame])[0].n_scaled == 20
        assert fe.transform(frame).timestamp == 0.5

    def test_unfitted_and_bad_params(self, rng):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            FrontEnd().transform(frame_with_object(rng))
        with pytest.raises(ValueError):
            FrontEnd(d_min=5, d_max=1).fit(intrinsics=K)
        with pytest.raises(ValueError):
            FrontEnd().fit()

    def test_rejects_mismatched_raster(self, rng):
        fe = FrontEnd().fit(intrinsics=K)
        bad = SensorFrame(0.0, kp([(1, 1)]), np.ones((10, 10), np.float32), InstanceMask.empty(10, 10))
        with pytest.raises(ValueError):
            fe.transform(bad)
