"""Frame-to-map tracking loop: prediction, matching, PnP, keyframing, local BA."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ..dataset_io import Trajectory
from ..exceptions import ConfigError, TrackingFailure
from ..frontend import FrontEndOutput
from ..geometry import CameraIntrinsics, Pose, compose, inverse
from .bundle_adjustment import DEFAULT_HUBER_DELTA, BAProblem, solve
from .mapping import WorldMap, insert_keyframe
from .matching import MatchParams, match_by_projection, match_exhaustive
from .pnp import RansacParams, pnp_ransac


@dataclass(frozen=True)
class TrackerConfig:
    """Back-end settings; ``sigma_d_abs`` overrides the depth-proportional prior std."""

    ransac: RansacParams = field(default_factory=RansacParams)
    match: MatchParams = field(default_factory=MatchParams)
    sigma_d_rel: float = 0.05
    sigma_d_abs: float | None = None
    huber_delta_px: float = DEFAULT_HUBER_DELTA
    ba_window: int = 5
    ba_max_iters: int = 20
    keyframe_min_ratio: float = 0.8
    keyframe_max_gap: int = 10
    depth_prior: bool = True
    seed: int = 0
    local_map_keyframes: int = 10
    reloc_keyframes: int = 3
    max_lost_frames: int = 30

    def __post_init__(self):
        if self.sigma_d_rel <= 0:
            raise ConfigError("sigma_d_rel must be positive")
        if self.sigma_d_abs is not None and self.sigma_d_abs <= 0:
            raise ConfigError("sigma_d_abs must be positive")
        if self.huber_delta_px <= 0:
            raise ConfigError("huber_delta_px must be positive")
        if self.ba_window < 2:
            raise ConfigError("ba_window must be >= 2")
        if self.ba_max_iters < 0:
            raise ConfigError("ba_max_iters must be >= 0")
        if not 0 < self.keyframe_min_ratio <= 1:
            raise ConfigError("keyframe_min_ratio must lie in (0, 1]")
        if self.keyframe_max_gap < 1:
            raise ConfigError("keyframe_max_gap must be >= 1")


def keyframe_decision(inliers: int, reference_inliers: int, frames_since: int,
                      min_ratio: float = 0.8, max_gap: int = 10) -> bool:
    return inliers < min_ratio * reference_inliers or frames_since >= max_gap


@dataclass
class FrameRecord:
    index: int
    timestamp: float
    status: str  # init | tracked | relocalized | lost
    matches: int = 0
    inliers: int = 0
    keyframe: bool = False
    ba_cost: float = float("nan")


@dataclass
class TrackingResult:
    """Per-frame outcome. ``poses`` are camera-from-world, ``None`` where lost."""

    timestamps: np.ndarray
    poses: list
    records: list
    world: WorldMap
    aborted: bool = False

    @property
    def tracked(self) -> np.ndarray:
        return np.array([p is not None for p in self.poses], dtype=bool)

    @property
    def n_keyframes(self) -> int:
        return len(self.world.keyframes)

    def trajectory(self) -> Trajectory:
        """World-from-camera poses of tracked frames only."""
        keep = [i for i, p in enumerate(self.poses) if p is not None]
        return Trajectory.from_poses(self.timestamps[keep], [inverse(self.poses[i]) for i in keep])


def local_bundle_adjustment(world: WorldMap, k: CameraIntrinsics, cfg: TrackerConfig):
    """Optimize the last ``ba_window`` keyframes and their points; oldest held fixed."""
    kfs = world.keyframes[-cfg.ba_window:]
    if len(kfs) < 2:
        return None
    cam_idx = np.concatenate([np.full(len(kf.point_ids), c) for c, kf in enumerate(kfs)])
    ids = np.concatenate([kf.point_ids for kf in kfs])
    uniq, pt_idx = np.unique(ids, return_inverse=True)
    pixels = np.concatenate([kf.pixels for kf in kfs])
    depth = np.concatenate([kf.depths for kf in kfs])
    if not cfg.depth_prior:
        depth = np.full_like(depth, np.nan)
    if cfg.sigma_d_abs is not None:
        sigma = np.full_like(depth, cfg.sigma_d_abs)
    else:
        sigma = cfg.sigma_d_rel * np.where(np.isnan(depth), 1.0, depth)
    fixed = np.zeros(len(kfs), dtype=bool)
    fixed[0] = True
    problem = BAProblem([kf.pose.rotation for kf in kfs], [kf.pose.translation for kf in kfs],
                        world.positions[uniq], cam_idx, pt_idx, pixels, depth, sigma, fixed)
    res = solve(problem, k, huber_delta=cfg.huber_delta_px, max_iterations=cfg.ba_max_iters)
    for c, kf in enumerate(kfs):
        if not fixed[c]:
            kf.pose = Pose.from_matrix(res.rotations[c], res.translations[c])
    world.positions[uniq] = res.points
    return res


class _Tracker:
    def __init__(self, k: CameraIntrinsics, cfg: TrackerConfig):
        self.k = k
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.world = WorldMap()
        self.last: Pose | None = None
        self.velocity = Pose.identity()
        self.ref_inliers = 0
        self.since_kf = 0
        self.lost = 0

    def _localize(self, fe: FrontEndOutput, predicted: Pose):
        ids = self.world.local_point_ids(self.cfg.local_map_keyframes)
        pixels, descs = fe.all_pixels(), fe.all_descriptors()
        m = match_by_projection(pixels, descs, self.world.positions[ids], self.world.descriptors[ids],
                                predicted.rotation, predicted.translation, self.k, self.cfg.match)
        res = pnp_ransac(self.world.positions[ids[m.point]], pixels[m.query], self.k,
                         self.cfg.ransac, self.rng)
        return res, m.query[res.inliers], ids[m.point[res.inliers]], len(m)

    def _relocalize(self, fe: FrontEndOutput):
        ids = self.world.local_point_ids(self.cfg.reloc_keyframes)
        pixels, descs = fe.all_pixels(), fe.all_descriptors()
        m = match_exhaustive(descs, self.world.descriptors[ids], self.cfg.match)
        res = pnp_ransac(self.world.positions[ids[m.point]], pixels[m.query], self.k,
                         self.cfg.ransac, self.rng)
        return res, m.query[res.inliers], ids[m.point[res.inliers]], len(m)

    def step(self, index: int, fe: FrontEndOutput):
        if self.last is None:
            # the first frame always seeds the map from depth
            kf, stats = insert_keyframe(self.world, fe, Pose.identity(), index,
                                        np.zeros(0, np.intp), np.zeros(0, np.intp), self.k,
                                        use_depth=True, match_params=self.cfg.match)
            self.last = Pose.identity()
            self.ref_inliers = stats.created
            return Pose.identity(), FrameRecord(index, fe.timestamp, "init", keyframe=True)

        status = "tracked"
        try:
            predicted = compose(self.velocity, self.last)
            res, q, pids, n_match = self._localize(fe, predicted)
        except TrackingFailure:
            try:
                res, q, pids, n_match = self._relocalize(fe)
                status = "relocalized"
            except TrackingFailure:
                self.lost += 1
                self.velocity = Pose.identity()
                return None, FrameRecord(index, fe.timestamp, "lost")
        self.lost = 0
        pose = res.pose
        self.velocity = compose(pose, inverse(self.last)) if status == "tracked" else Pose.identity()
        self.since_kf += 1
        rec = FrameRecord(index, fe.timestamp, status, n_match, len(q))
        cfg = self.cfg
        if keyframe_decision(len(q), self.ref_inliers, self.since_kf,
                             cfg.keyframe_min_ratio, cfg.keyframe_max_gap):
            insert_keyframe(self.world, fe, pose, index, q, pids, self.k,
                            use_depth=cfg.depth_prior, reproj_threshold_px=cfg.ransac.reproj_threshold_px,
                            match_params=cfg.match)
            ba = local_bundle_adjustment(self.world, self.k, cfg)
            if ba is not None:
                rec.ba_cost = ba.final_cost
            pose = self.world.keyframes[-1].pose
            self.ref_inliers = len(q)
            self.since_kf = 0
            rec.keyframe = True
        self.last = pose
        return pose, rec


def track_sequence(frames, k: CameraIntrinsics, cfg: TrackerConfig | None = None) -> TrackingResult:
    """Track a stream of front-end outputs.

    Lost frames get a ``None`` pose. After ``max_lost_frames`` consecutive
    losses the run stops early with ``aborted=True``.
    """
    cfg = cfg or TrackerConfig()
    tr = _Tracker(k, cfg)
    times, poses, records = [], [], []
    aborted = False
    for index, fe in enumerate(frames):
        pose, rec = tr.step(index, fe)
        times.append(fe.timestamp)
        poses.append(pose)
        records.append(rec)
        if tr.lost >= cfg.max_lost_frames:
            aborted = True
            break
    if not records:
        raise ValueError("track_sequence needs at least one frame")
    return TrackingResult(np.asarray(times, dtype=float), poses, records, tr.world, aborted)


@dataclass
class PipelineResult:
    tracking: TrackingResult
    frontend_seconds: list

    @property
    def mean_frontend_latency(self) -> float:
        return float(np.mean(self.frontend_seconds)) if self.frontend_seconds else 0.0


def run_pipeline(sensor, frontend, cfg: TrackerConfig | None = None) -> PipelineResult:
    """Feed a sensor stream through a fitted front end into the tracker."""
    latencies = []

    def outputs():
        for frame in sensor:
            t0 = time.perf_counter()
            out = frontend.transform_frame(frame)
            latencies.append(time.perf_counter() - t0)
            yield out

    result = track_sequence(outputs(), frontend.intrinsics_, cfg)
    return PipelineResult(result, latencies)


class SlamTracker(BaseEstimator):
    """Estimator wrapper: ``fit`` runs the tracker over front-end outputs."""

    def __init__(self, sigma_d_rel=0.05, sigma_d_abs=None, huber_delta_px=DEFAULT_HUBER_DELTA,
                 ransac_max_iterations=300, ransac_reproj_threshold_px=2.0, ransac_min_inliers=15,
                 ransac_confidence=0.99, ba_window=5, ba_max_iters=20, keyframe_min_ratio=0.8,
                 keyframe_max_gap=10, depth_prior=True, seed=0):
        self.sigma_d_rel = sigma_d_rel
        self.sigma_d_abs = sigma_d_abs
        self.huber_delta_px = huber_delta_px
        self.ransac_max_iterations = ransac_max_iterations
        self.ransac_reproj_threshold_px = ransac_reproj_threshold_px
        self.ransac_min_inliers = ransac_min_inliers
        self.ransac_confidence = ransac_confidence
        self.ba_window = ba_window
        self.ba_max_iters = ba_max_iters
        self.keyframe_min_ratio = keyframe_min_ratio
        self.keyframe_max_gap = keyframe_max_gap
        self.depth_prior = depth_prior
        self.seed = seed

    def config(self) -> TrackerConfig:
        ransac = RansacParams(self.ransac_max_iterations, self.ransac_reproj_threshold_px,
                              self.ransac_min_inliers, self.ransac_confidence)
        return TrackerConfig(ransac=ransac, sigma_d_rel=self.sigma_d_rel, sigma_d_abs=self.sigma_d_abs,
                             huber_delta_px=self.huber_delta_px, ba_window=self.ba_window,
                             ba_max_iters=self.ba_max_iters, keyframe_min_ratio=self.keyframe_min_ratio,
                             keyframe_max_gap=self.keyframe_max_gap, depth_prior=bool(self.depth_prior),
                             seed=self.seed)

    def fit(self, X, y=None, intrinsics: CameraIntrinsics | None = None):
        if intrinsics is None:
            raise ValueError("SlamTracker.fit needs camera intrinsics")
        self.result_ = track_sequence(X, intrinsics, self.config())
        self.trajectory_ = self.result_.trajectory()
        return self

    def predict(self, X=None) -> Trajectory:
        if not hasattr(self, "trajectory_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("SlamTracker is not fitted yet")
        return self.trajectory_
