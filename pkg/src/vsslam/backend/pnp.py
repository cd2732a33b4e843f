"""Absolute pose from 3D-2D correspondences: Grunert P3P inside RANSAC.

Rotations and translations are handled as plain ``(R, t)`` arrays here for
speed; the public entry points convert to :class:`~vsslam.geometry.Pose`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..exceptions import TrackingFailure
from ..geometry import CameraIntrinsics, Pose, skew, so3_exp


@dataclass(frozen=True)
class RansacParams:
    max_iterations: int = 300
    reproj_threshold_px: float = 2.0
    min_inliers: int = 15
    confidence: float = 0.99

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.reproj_threshold_px <= 0:
            raise ValueError("reproj_threshold_px must be positive")
        if self.min_inliers < 4:
            raise ValueError("min_inliers must be >= 4")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")


def bearings(pixels: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Unit viewing rays for pixels."""
    pixels = np.asarray(pixels, dtype=float)
    rays = np.stack([(pixels[..., 0] - k.cx) / k.fx, (pixels[..., 1] - k.cy) / k.fy,
                     np.ones(pixels.shape[:-1])], axis=-1)
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def rigid_from_points(src: np.ndarray, dst: np.ndarray):
    """Least-squares ``R, t`` with ``dst ~ R @ src + t`` (no reflection)."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    H = (dst - mu_d).T @ (src - mu_s)
    U, _, Vt = np.linalg.svd(H)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return R, mu_d - R @ mu_s


def _grunert_quartic(a2, b2, c2, ca, cb, cg):
    p = (a2 - c2) / b2
    q = (a2 + c2) / b2
    return np.array([
        (p - 1) ** 2 - 4 * c2 / b2 * ca ** 2,
        4 * (p * (1 - p) * cb - (1 - q) * ca * cg + 2 * c2 / b2 * ca ** 2 * cb),
        2 * (p ** 2 - 1 + 2 * p ** 2 * cb ** 2 + 2 * (b2 - c2) / b2 * ca ** 2
             - 4 * q * ca * cb * cg + 2 * (b2 - a2) / b2 * cg ** 2),
        4 * (-p * (1 + p) * cb + 2 * a2 / b2 * cg ** 2 * cb - (1 - q) * ca * cg),
        (1 + p) ** 2 - 4 * a2 / b2 * cg ** 2,
    ])


def _polish_distances(s, sq, cosines, iters=30):
    """Newton steps on the three law-of-cosines equations in (s1, s2, s3)."""
    a2, b2, c2 = sq
    ca, cb, cg = cosines
    for _ in range(iters):
        s1, s2, s3 = s
        f = np.array([s2 * s2 + s3 * s3 - 2 * s2 * s3 * ca - a2,
                      s1 * s1 + s3 * s3 - 2 * s1 * s3 * cb - b2,
                      s1 * s1 + s2 * s2 - 2 * s1 * s2 * cg - c2])
        J = np.array([[0.0, 2 * s2 - 2 * s3 * ca, 2 * s3 - 2 * s2 * ca],
                      [2 * s1 - 2 * s3 * cb, 0.0, 2 * s3 - 2 * s1 * cb],
                      [2 * s1 - 2 * s2 * cg, 2 * s2 - 2 * s1 * cg, 0.0]])
        try:
            step = np.linalg.solve(J, f)
        except np.linalg.LinAlgError:
            break
        s = s - step
        if np.max(np.abs(step)) < 1e-15 * max(1.0, np.max(np.abs(s))):
            break
    return s


def _p3p(world: np.ndarray, rays: np.ndarray) -> list:
    """All ``(R, t)`` consistent with three world points and their unit rays."""
    P1, P2, P3 = world
    a2 = float(np.sum((P2 - P3) ** 2))
    b2 = float(np.sum((P1 - P3) ** 2))
    c2 = float(np.sum((P1 - P2) ** 2))
    area = np.linalg.norm(np.cross(P2 - P1, P3 - P1))
    scale2 = max(a2, b2, c2)
    if scale2 == 0 or area < 1e-9 * scale2:
        return []
    j1, j2, j3 = rays
    ca, cb, cg = float(j2 @ j3), float(j1 @ j3), float(j1 @ j2)
    roots = np.roots(_grunert_quartic(a2, b2, c2, ca, cb, cg))
    out = []
    for v in roots:
        if abs(v.imag) > 1e-6 * max(1.0, abs(v.real)):
            continue
        v = v.real
        if v <= 0:
            continue
        denom = 1 + v * v - 2 * v * cb
        if denom <= 0:
            continue
        s1 = math.sqrt(b2 / denom)
        s3 = v * s1
        # s2 from the c-equation; the a-equation picks the branch
        disc = cg * cg - 1 + c2 / (s1 * s1)
        if disc < 0:
            if disc < -1e-9:
                continue
            disc = 0.0
        best = None
        for u in (cg + math.sqrt(disc), cg - math.sqrt(disc)):
            if u <= 0:
                continue
            s2 = u * s1
            err = abs(s2 * s2 + s3 * s3 - 2 * s2 * s3 * ca - a2)
            if best is None or err < best[0]:
                best = (err, s2)
        if best is None:
            continue
        s = _polish_distances(np.array([s1, best[1], s3]), (a2, b2, c2), (ca, cb, cg))
        if np.any(s <= 0):
            continue
        cam = s[:, None] * rays
        R, t = rigid_from_points(world, cam)
        if np.max(np.abs(cam - (world @ R.T + t))) > 1e-4 * math.sqrt(scale2):
            continue
        if any(np.allclose(R, R0, atol=1e-9) and np.allclose(t, t0, atol=1e-9) for R0, t0 in out):
            continue
        out.append((R, t))
    return out


def p3p_solve(world_points, pixels, k: CameraIntrinsics) -> list[Pose]:
    """Up to four camera-from-world poses from three correspondences.

    Collinear or coincident world points yield an empty list.
    """
    world = np.asarray(world_points, dtype=float).reshape(3, 3)
    rays = bearings(np.asarray(pixels, dtype=float).reshape(3, 2), k)
    return [Pose.from_matrix(R, t) for R, t in _p3p(world, rays)]


def reprojection_errors(R, t, world, pixels, k: CameraIntrinsics) -> np.ndarray:
    pc = world @ R.T + t
    z = pc[:, 2]
    err = np.full(len(world), np.inf)
    front = z > 1e-9
    proj = pc[front, :2] / z[front, None] * [k.fx, k.fy] + [k.cx, k.cy]
    err[front] = np.linalg.norm(proj - pixels[front], axis=1)
    return err


def refine_pose(R, t, world, pixels, k: CameraIntrinsics, iterations: int = 10):
    """Gauss-Newton on squared reprojection error (left-multiplied SE(3) update)."""
    R, t = R.copy(), t.copy()
    fx, fy = k.fx, k.fy
    prev = None
    for _ in range(iterations):
        pc = world @ R.T + t
        x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
        if np.any(z <= 1e-9):
            break
        iz = 1.0 / z
        r = np.stack([fx * x * iz + k.cx, fy * y * iz + k.cy], axis=-1) - pixels
        cost = float(np.sum(r * r))
        if prev is not None and cost >= prev * (1 - 1e-12):
            break
        prev = cost
        Jp = np.zeros((len(world), 2, 3))
        Jp[:, 0, 0] = fx * iz
        Jp[:, 0, 2] = -fx * x * iz * iz
        Jp[:, 1, 1] = fy * iz
        Jp[:, 1, 2] = -fy * y * iz * iz
        J = np.concatenate([Jp, -Jp @ skew(pc)], axis=2).reshape(-1, 6)
        H = J.T @ J
        g = J.T @ r.reshape(-1)
        try:
            delta = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        dR = so3_exp(delta[3:])
        R_new = dR @ R
        t_new = dR @ t + delta[:3]
        pc_new = world @ R_new.T + t_new
        if np.any(pc_new[:, 2] <= 1e-9):
            break
        r_new = pc_new[:, :2] / pc_new[:, 2:3] * [fx, fy] + [k.cx, k.cy] - pixels
        if np.sum(r_new * r_new) > cost:
            break
        R, t = R_new, t_new
        if np.max(np.abs(delta)) < 1e-14:
            break
    return R, t


@dataclass
class PnPResult:
    pose: Pose
    inliers: np.ndarray
    iterations: int
    p3p_pose: Pose


def _required_iterations(inlier_ratio: float, confidence: float, cap: int) -> int:
    if inlier_ratio <= 0:
        return cap
    if inlier_ratio >= 1:
        return 1
    denom = math.log(1.0 - inlier_ratio ** 3)
    if denom == 0:
        return cap
    return min(cap, max(1, int(math.ceil(math.log(1.0 - confidence) / denom))))


def pnp_ransac(world_points, pixels, k: CameraIntrinsics, params: RansacParams | None = None,
               rng: np.random.Generator | None = None) -> PnPResult:
    """Robust camera-from-world pose from noisy, outlier-laden correspondences.

    Raises :class:`TrackingFailure` when fewer than ``min_inliers`` inliers
    survive.
    """
    params = params or RansacParams()
    rng = rng if rng is not None else np.random.default_rng(0)
    world = np.asarray(world_points, dtype=float).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    n = len(world)
    if n < max(3, params.min_inliers):
        raise TrackingFailure(f"{n} correspondences, need at least {params.min_inliers}")
    rays = bearings(pixels, k)
    thr = params.reproj_threshold_px
    best = None  # (count, score, R, t, mask)
    needed = params.max_iterations
    it = 0
    while it < min(needed, params.max_iterations):
        it += 1
        idx = rng.choice(n, size=3, replace=False)
        for R, t in _p3p(world[idx], rays[idx]):
            err = reprojection_errors(R, t, world, pixels, k)
            mask = err <= thr
            count = int(mask.sum())
            score = float(np.sum(np.minimum(err, thr)))
            if best is None or count > best[0] or (count == best[0] and score < best[1]):
                best = (count, score, R, t, mask)
                needed = _required_iterations(count / n, params.confidence, params.max_iterations)
    if best is None or best[0] < params.min_inliers:
        found = 0 if best is None else best[0]
        raise TrackingFailure(f"RANSAC found {found} inliers, need {params.min_inliers}")
    _, _, R0, t0, mask = best
    R, t = R0, t0
    for _ in range(2):
        R, t = refine_pose(R, t, world[mask], pixels[mask], k)
        new_mask = reprojection_errors(R, t, world, pixels, k) <= thr
        if np.array_equal(new_mask, mask) or new_mask.sum() < params.min_inliers:
            break
        mask = new_mask
    inliers = np.flatnonzero(mask)
    if len(inliers) < params.min_inliers:
        raise TrackingFailure(f"{len(inliers)} inliers after refinement")
    return PnPResult(Pose.from_matrix(R, t), inliers, it, Pose.from_matrix(R0, t0))
