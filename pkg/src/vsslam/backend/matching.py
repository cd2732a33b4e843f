"""Descriptor association between frame features and map points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..descriptors import hamming, pairwise_hamming
from ..geometry import CameraIntrinsics


@dataclass(frozen=True)
class MatchParams:
    radius_px: float = 15.0
    max_distance: int = 64
    ratio: float = 0.8


@dataclass
class Matches:
    """Parallel arrays: query feature index, map point index, Hamming distance."""

    query: np.ndarray
    point: np.ndarray
    distance: np.ndarray

    def __len__(self):
        return len(self.query)

    @classmethod
    def empty(cls) -> "Matches":
        z = np.zeros(0, dtype=np.intp)
        return cls(z, z.copy(), np.zeros(0, dtype=np.int32))


def _select(point_idx: np.ndarray, query_idx: np.ndarray, dist: np.ndarray,
            params: MatchParams) -> Matches:
    """Per-point ratio test, then greedy one-to-one assignment by distance."""
    if len(point_idx) == 0:
        return Matches.empty()
    order = np.lexsort((query_idx, dist, point_idx))
    p, q, d = point_idx[order], query_idx[order], dist[order]
    first = np.flatnonzero(np.r_[True, p[1:] != p[:-1]])
    counts = np.diff(np.r_[first, len(p)])
    best = d[first]
    second = np.where(counts > 1, d[np.minimum(first + 1, len(d) - 1)], np.iinfo(np.int32).max)
    ok = (best <= params.max_distance) & (
        (counts == 1) | ((best <= params.ratio * second) & (best < second)))
    cand_p, cand_q, cand_d = p[first][ok], q[first][ok], best[ok]
    order = np.lexsort((cand_q, cand_p, cand_d))
    used_q, used_p = set(), set()
    keep = []
    for i in order:
        qi, pi = int(cand_q[i]), int(cand_p[i])
        if qi in used_q or pi in used_p:
            continue
        used_q.add(qi)
        used_p.add(pi)
        keep.append(i)
    keep = np.array(sorted(keep, key=lambda i: cand_q[i]), dtype=np.intp)
    return Matches(cand_q[keep].astype(np.intp), cand_p[keep].astype(np.intp),
                   cand_d[keep].astype(np.int32))


def match_by_projection(query_pixels: np.ndarray, query_desc: np.ndarray,
                        point_world: np.ndarray, point_desc: np.ndarray,
                        R: np.ndarray, t: np.ndarray, k: CameraIntrinsics,
                        params: MatchParams = MatchParams()) -> Matches:
    """Match map points to features near their predicted projections.

    ``R, t`` is the predicted camera-from-world pose. Point indices in the
    result refer to rows of ``point_world``.
    """
    if len(query_pixels) == 0 or len(point_world) == 0:
        return Matches.empty()
    pc = point_world @ R.T + t
    z = pc[:, 2]
    front = np.flatnonzero(z > 1e-6)
    uv = pc[front, :2] / z[front, None] * [k.fx, k.fy] + [k.cx, k.cy]
    r = params.radius_px
    vis = (uv[:, 0] > -r) & (uv[:, 0] < k.width - 1 + r) & (uv[:, 1] > -r) & (uv[:, 1] < k.height - 1 + r)
    front, uv = front[vis], uv[vis]
    if len(front) == 0:
        return Matches.empty()
    tree = cKDTree(np.asarray(query_pixels, dtype=float))
    neighbors = tree.query_ball_point(uv, r)
    counts = np.fromiter((len(n) for n in neighbors), dtype=np.intp, count=len(neighbors))
    if counts.sum() == 0:
        return Matches.empty()
    p_idx = np.repeat(front, counts)
    q_idx = np.fromiter((j for n in neighbors for j in n), dtype=np.intp, count=int(counts.sum()))
    dist = hamming(query_desc[q_idx], point_desc[p_idx])
    return _select(p_idx, q_idx, dist, params)


def match_exhaustive(query_desc: np.ndarray, point_desc: np.ndarray,
                     params: MatchParams = MatchParams()) -> Matches:
    """Descriptor-only matching of every query against every point."""
    if len(query_desc) == 0 or len(point_desc) == 0:
        return Matches.empty()
    D = pairwise_hamming(point_desc, query_desc)
    # two best queries per point suffice for the ratio test
    take = min(2, D.shape[1])
    part = np.argpartition(D, take - 1, axis=1)[:, :take]
    p_idx = np.repeat(np.arange(len(point_desc)), take)
    q_idx = part.reshape(-1)
    return _select(p_idx, q_idx, D[p_idx, q_idx], params)
