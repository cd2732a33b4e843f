"""Map state (points, keyframes) and keyframe insertion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..descriptors import pairwise_hamming
from ..frontend import FrontEndOutput
from ..geometry import CameraIntrinsics, Pose
from .matching import MatchParams, _select


@dataclass
class MapPoint:
    id: int
    position: np.ndarray
    descriptor: np.ndarray
    observations: int


@dataclass
class KeyFrame:
    """A selected frame and what it observed.

    ``depths`` holds the depth prior per observation, NaN where absent.
    ``spare_*`` keep features that did not become observations; monocular
    mapping triangulates new points from them.
    """

    id: int
    frame_index: int
    timestamp: float
    pose: Pose
    point_ids: np.ndarray
    pixels: np.ndarray
    depths: np.ndarray
    spare_pixels: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    spare_descriptors: np.ndarray = field(default_factory=lambda: np.zeros((0, 32), np.uint8))

    def add_observations(self, ids, pixels, depths):
        self.point_ids = np.concatenate([self.point_ids, np.asarray(ids, dtype=np.intp)])
        self.pixels = np.concatenate([self.pixels, np.asarray(pixels, float).reshape(-1, 2)])
        self.depths = np.concatenate([self.depths, np.asarray(depths, float).reshape(-1)])

    def remove_spares(self, idx):
        keep = np.ones(len(self.spare_pixels), dtype=bool)
        keep[np.asarray(idx, dtype=np.intp)] = False
        self.spare_pixels = self.spare_pixels[keep]
        self.spare_descriptors = self.spare_descriptors[keep]


class WorldMap:
    """Growable arrays of map points plus the ordered keyframe list."""

    def __init__(self, capacity: int = 4096):
        self.positions = np.zeros((capacity, 3))
        self.descriptors = np.zeros((capacity, 32), dtype=np.uint8)
        self.n_obs = np.zeros(capacity, dtype=np.int64)
        self.n_points = 0
        self.keyframes: list[KeyFrame] = []

    def _grow(self, extra: int):
        need = self.n_points + extra
        cap = len(self.positions)
        if need <= cap:
            return
        new_cap = max(need, 2 * cap)
        self.positions = np.resize(self.positions, (new_cap, 3))
        self.descriptors = np.resize(self.descriptors, (new_cap, 32))
        self.n_obs = np.resize(self.n_obs, new_cap)

    def add_points(self, positions: np.ndarray, descriptors: np.ndarray) -> np.ndarray:
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        n = len(positions)
        self._grow(n)
        ids = np.arange(self.n_points, self.n_points + n)
        self.positions[ids] = positions
        self.descriptors[ids] = descriptors
        self.n_obs[ids] = 1
        self.n_points += n
        return ids

    def point(self, pid: int) -> MapPoint:
        if not 0 <= pid < self.n_points:
            raise KeyError(pid)
        return MapPoint(pid, self.positions[pid].copy(), self.descriptors[pid].copy(),
                        int(self.n_obs[pid]))

    def observe(self, ids: np.ndarray, descriptors: np.ndarray):
        self.n_obs[ids] += 1
        self.descriptors[ids] = descriptors

    def local_point_ids(self, n_keyframes: int) -> np.ndarray:
        kfs = self.keyframes[-n_keyframes:]
        if not kfs:
            return np.zeros(0, dtype=np.intp)
        return np.unique(np.concatenate([kf.point_ids for kf in kfs]))

    def __len__(self):
        return self.n_points


def triangulate(R1, t1, R2, t2, uv1, uv2, k: CameraIntrinsics) -> np.ndarray:
    """Linear (DLT) two-view triangulation of pixel pairs, vectorized."""
    Kmat = k.K
    P1 = Kmat @ np.hstack([R1, t1[:, None]])
    P2 = Kmat @ np.hstack([R2, t2[:, None]])
    n = len(uv1)
    A = np.empty((n, 4, 4))
    A[:, 0] = uv1[:, 0, None] * P1[2] - P1[0]
    A[:, 1] = uv1[:, 1, None] * P1[2] - P1[1]
    A[:, 2] = uv2[:, 0, None] * P2[2] - P2[0]
    A[:, 3] = uv2[:, 1, None] * P2[2] - P2[1]
    _, _, Vt = np.linalg.svd(A)
    X = Vt[:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        return X[:, :3] / X[:, 3:4]


@dataclass
class InsertStats:
    matched: int
    created: int
    triangulated: int


def insert_keyframe(world: WorldMap, fe: FrontEndOutput, pose: Pose, frame_index: int,
                    matched_query: np.ndarray, matched_points: np.ndarray, k: CameraIntrinsics,
                    use_depth: bool = True, min_parallax_deg: float = 1.0,
                    reproj_threshold_px: float = 2.0,
                    match_params: MatchParams = MatchParams()) -> tuple[KeyFrame, InsertStats]:
    """Add a keyframe; matched features observe existing points.

    With ``use_depth`` unmatched scaled features become new points at once.
    Otherwise new points are triangulated against the previous keyframe's
    spare features when parallax and visibility allow.
    """
    pixels = fe.all_pixels()
    descs = fe.all_descriptors()
    n_scaled = fe.n_scaled
    depth_all = np.full(len(pixels), np.nan)
    if use_depth:
        depth_all[:n_scaled] = fe.depths
    matched_query = np.asarray(matched_query, dtype=np.intp)
    matched_points = np.asarray(matched_points, dtype=np.intp)

    kf = KeyFrame(len(world.keyframes), frame_index, fe.timestamp, pose,
                  matched_points.copy(), pixels[matched_query], depth_all[matched_query])
    world.observe(matched_points, descs[matched_query])

    unmatched = np.ones(len(pixels), dtype=bool)
    unmatched[matched_query] = False
    created = 0
    triangulated = 0
    if use_depth:
        new = np.flatnonzero(unmatched[:n_scaled])
        if len(new):
            R, t = pose.rotation, pose.translation
            pw = (fe.points[new] - t) @ R
            ids = world.add_points(pw, descs[new])
            kf.add_observations(ids, pixels[new], depth_all[new])
            created = len(new)
            unmatched[new] = False
    elif world.keyframes:
        prev = world.keyframes[-1]
        cand = np.flatnonzero(unmatched)
        if len(cand) and len(prev.spare_pixels):
            D = pairwise_hamming(prev.spare_descriptors, descs[cand])
            take = min(2, D.shape[1])
            part = np.argpartition(D, take - 1, axis=1)[:, :take]
            p_idx = np.repeat(np.arange(len(prev.spare_pixels)), take)
            q_idx = part.reshape(-1)
            m = _select(p_idx, q_idx, D[p_idx, q_idx], match_params)
            if len(m):
                R1, t1 = prev.pose.rotation, prev.pose.translation
                R2, t2 = pose.rotation, pose.translation
                uv1 = prev.spare_pixels[m.point]
                uv2 = pixels[cand[m.query]]
                X = triangulate(R1, t1, R2, t2, uv1, uv2, k)
                ok = np.all(np.isfinite(X), axis=1)
                c1 = X @ R1.T + t1
                c2 = X @ R2.T + t2
                ok &= (c1[:, 2] > 0.05) & (c2[:, 2] > 0.05)
                o1, o2 = prev.pose.center, pose.center
                r1, r2 = X - o1, X - o2
                cosang = np.einsum("ij,ij->i", r1, r2) / (
                    np.linalg.norm(r1, axis=1) * np.linalg.norm(r2, axis=1) + 1e-300)
                ok &= cosang < np.cos(np.deg2rad(min_parallax_deg))
                with np.errstate(divide="ignore", invalid="ignore"):
                    e1 = np.linalg.norm(c1[:, :2] / c1[:, 2:3] * [k.fx, k.fy] + [k.cx, k.cy] - uv1, axis=1)
                    e2 = np.linalg.norm(c2[:, :2] / c2[:, 2:3] * [k.fx, k.fy] + [k.cx, k.cy] - uv2, axis=1)
                ok &= (e1 <= reproj_threshold_px) & (e2 <= reproj_threshold_px)
                if ok.any():
                    q = cand[m.query[ok]]
                    ids = world.add_points(X[ok], descs[q])
                    world.n_obs[ids] = 2
                    prev.add_observations(ids, uv1[ok], np.full(int(ok.sum()), np.nan))
                    prev.remove_spares(m.point[ok])
                    kf.add_observations(ids, pixels[q], np.full(len(q), np.nan))
                    unmatched[q] = False
                    triangulated = len(q)
    spare = np.flatnonzero(unmatched)
    kf.spare_pixels = pixels[spare]
    kf.spare_descriptors = descs[spare]
    world.keyframes.append(kf)
    return kf, InsertStats(len(matched_query), created, triangulated)
