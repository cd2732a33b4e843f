import numpy as np
import pytest

from oracles import K, points_in_view, random_rotation
from vsslam.backend import (SlamTracker, TrackerConfig, WorldMap, insert_keyframe,
                            keyframe_decision, track_sequence)
from vsslam.backend.mapping import triangulate
from vsslam.exceptions import ConfigError
from vsslam.experiments import render_sequence, static_orbit
from vsslam.frontend import FrontEnd, FrontEndOutput
from vsslam.geometry import CameraIntrinsics, Pose, compose, inverse, project, rotation_angle


def fe_output(rng, R, t, n, mono=0, timestamp=0.0):
    pw, uv = points_in_view(rng, R, t, n + mono)
    pc = pw @ R.T + t
    desc = rng.integers(0, 256, (n + mono, 32), dtype=np.uint8)
    return FrontEndOutput(pc[:n], desc[:n], uv[:n], pc[:n, 2], uv[n:], desc[n:], timestamp), pw


class TestKeyframeDecision:
    def test_examples(self):
        assert keyframe_decision(100, 100, 2) is False
        assert keyframe_decision(70, 100, 2) is True
        assert keyframe_decision(100, 100, 10) is True
        assert keyframe_decision(80, 100, 1) is False


class TestInsertKeyframe:
    def test_empty_map_creates_all_scaled(self, rng):
        world = WorldMap()
        fe, _ = fe_output(rng, np.eye(3), np.zeros(3), 25, mono=7)
        kf, stats = insert_keyframe(world, fe, Pose.identity(), 0, [], [], K)
        assert stats.created == 25 and len(world) == 25
        assert len(kf.point_ids) == 25 and len(kf.spare_pixels) == 7

    def test_matched_feature_adds_observation(self, rng):
        world = WorldMap()
        fe, _ = fe_output(rng, np.eye(3), np.zeros(3), 5)
        insert_keyframe(world, fe, Pose.identity(), 0, [], [], K)
        fe2, _ = fe_output(rng, np.eye(3), np.zeros(3), 3)
        kf, stats = insert_keyframe(world, fe2, Pose.identity(), 1, [0], [2], K)
        assert stats.matched == 1 and stats.created == 2 and len(world) == 7
        assert world.point(2).observations == 2
        np.testing.assert_array_equal(world.point(2).descriptor, fe2.descriptors[0])

    def test_mono_never_creates(self, rng):
        world = WorldMap()
        fe, _ = fe_output(rng, np.eye(3), np.zeros(3), 0, mono=10)
        insert_keyframe(world, fe, Pose.identity(), 0, [], [], K)
        assert len(world) == 0

    def test_world_position_round_trip(self, rng):
        R, t = random_rotation(rng), rng.normal(size=3)
        fe, pw = fe_output(rng, R, t, 40)
        world = WorldMap(capacity=8)
        kf, _ = insert_keyframe(world, fe, Pose.from_matrix(R, t), 0, [], [], K)
        np.testing.assert_allclose(world.positions[:40], pw, atol=1e-9)
        uv = project(world.positions[:40] @ R.T + t, K)
        assert np.abs(uv - fe.pixels).max() < 0.5

    def test_monocular_triangulation(self, rng):
        world = WorldMap()
        R1, t1 = np.eye(3), np.zeros(3)
        pw, uv1 = points_in_view(rng, R1, t1, 30, zmin=2, zmax=4)
        desc = rng.integers(0, 256, (30, 32), dtype=np.uint8)
        empty = np.zeros((0, 3))
        fe1 = FrontEndOutput(empty, desc[:0], np.zeros((0, 2)), np.zeros(0), uv1, desc)
        insert_keyframe(world, fe1, Pose.identity(), 0, [], [], K, use_depth=False)
        pose2 = Pose.from_matrix(np.eye(3), np.array([-0.3, 0.0, 0.0]))
        pc2 = pw + pose2.translation
        uv2 = pc2[:, :2] / pc2[:, 2:3] * 500 + [320, 240]
        fe2 = FrontEndOutput(empty, desc[:0], np.zeros((0, 2)), np.zeros(0), uv2, desc)
        kf, stats = insert_keyframe(world, fe2, pose2, 1, [], [], K, use_depth=False)
        assert stats.triangulated == 30
        assert stats.created == 0
        assert np.isnan(kf.depths).all()
        errs = [np.min(np.linalg.norm(pw - x, axis=1)) for x in world.positions[:len(world)]]
        assert max(errs) < 1e-6

    def test_triangulate_dlt(self, rng):
        R1, t1 = random_rotation(rng), rng.normal(size=3)
        R2 = R1
        t2 = t1 + np.array([0.5, 0.1, 0.0])
        pw, uv1 = points_in_view(rng, R1, t1, 20, zmin=2, zmax=5)
        pc2 = pw @ R2.T + t2
        uv2 = pc2[:, :2] / pc2[:, 2:3] * 500 + [320, 240]
        np.testing.assert_allclose(triangulate(R1, t1, R2, t2, uv1, uv2, K), pw, atol=1e-8)


def frames_for(k, n, seed=0):
    cfg, spec = static_orbit(n, landmarks=800)
    seq = render_sequence(cfg, spec, k, seed, n)
    fe = FrontEnd().fit(intrinsics=k)
    return seq, [fe.transform_frame(f) for f in seq.frames]


KS = CameraIntrinsics(125.0, 125.0, 79.5, 59.5, 160, 120)


class TestTracking:
    def test_single_frame_identity(self):
        _, outs = frames_for(KS, 1)
        res = track_sequence(outs, KS)
        assert len(res.poses) == 1
        np.testing.assert_array_equal(res.poses[0].matrix(), np.eye(4))
        assert res.records[0].status == "init" and res.n_keyframes == 1
        traj = res.trajectory()
        assert len(traj) == 1

    def test_empty_stream_rejected(self):
        with pytest.raises(ValueError):
            track_sequence([], KS)

    def test_short_noiseless_orbit(self):
        seq, outs = frames_for(KS, 40)
        res = track_sequence(outs, KS)
        assert res.tracked.all() and not res.aborted
        gt = seq.groundtruth.poses()
        first_inv = inverse(gt[0])
        for pose, g in zip(res.poses, gt):
            rel = compose(pose, compose(first_inv, g))
            assert np.linalg.norm(rel.translation) < 1e-3
            assert np.degrees(rotation_angle(rel.rotation)) < 0.05
        assert res.n_keyframes >= 4

    def test_deterministic(self):
        _, outs = frames_for(KS, 20)
        a = track_sequence(outs, KS, TrackerConfig(seed=3))
        b = track_sequence(outs, KS, TrackerConfig(seed=3))
        for p, q in zip(a.poses, b.poses):
            assert np.array_equal(p.matrix(), q.matrix())

    def test_relocalization_after_gap(self):
        # skipping ahead moves projections beyond the 15 px search window
        _, outs = frames_for(KS, 30)
        empty = FrontEndOutput(np.zeros((0, 3)), np.zeros((0, 32), np.uint8), np.zeros((0, 2)),
                               np.zeros(0))
        stream = outs[:6] + [empty, empty] + outs[18:]
        res = track_sequence(stream, KS)
        statuses = [r.status for r in res.records]
        assert statuses[6:8] == ["lost", "lost"]
        assert statuses[8] == "relocalized"
        assert res.poses[6] is None and res.poses[8] is not None
        assert len(res.trajectory()) == len(stream) - 2
        assert not res.aborted

    def test_abort_after_thirty_losses(self):
        _, outs = frames_for(KS, 3)
        empty = FrontEndOutput(np.zeros((0, 3)), np.zeros((0, 32), np.uint8), np.zeros((0, 2)),
                               np.zeros(0))
        res = track_sequence(outs + [empty] * 40, KS)
        assert res.aborted
        assert len(res.records) == 3 + 30

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrackerConfig(ba_window=1)
        with pytest.raises(ConfigError):
            TrackerConfig(sigma_d_abs=0.0)

    def test_estimator(self):
        from sklearn.exceptions import NotFittedError

        _, outs = frames_for(KS, 10)
        with pytest.raises(NotFittedError):
            SlamTracker().predict()
        est = SlamTracker(ba_window=3).fit(outs, intrinsics=KS)
        assert len(est.predict()) == 10
        with pytest.raises(ValueError):
            SlamTracker().fit(outs)
