"""Independent reference computations shared by unit and acceptance tests."""

import numpy as np

from vsslam.backend.bundle_adjustment import (BAProblem, camera_points, depth_jacobians,
                                              depth_residuals, reprojection_jacobians,
                                              reprojection_residuals)
from vsslam.geometry import CameraIntrinsics, Pose, look_at, so3_exp

K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    x, y, z, w = q
    return np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                     [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                     [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)]])


def points_in_view(rng, R, t, n, k=K, zmin=1.0, zmax=8.0):
    """World points that project inside the image of camera (R, t)."""
    uv = np.column_stack([rng.uniform(0, k.width - 1, n), rng.uniform(0, k.height - 1, n)])
    z = rng.uniform(zmin, zmax, n)
    pc = np.column_stack([(uv[:, 0] - k.cx) / k.fx * z, (uv[:, 1] - k.cy) / k.fy * z, z])
    return (pc - t) @ R, uv


def synthetic_ba(rng, n_cams=4, n_points=40, k=K, sigma_rel=0.05):
    """Noiseless multi-view problem: cameras on an arc looking at a cloud near (0, 0, 4)."""
    pts = rng.normal(size=(n_points, 3)) * [1.0, 0.7, 0.5] + [0, 0, 4.0]
    Rs, ts = [], []
    for c in range(n_cams):
        p = look_at((0.6 * c - 0.3 * n_cams, -0.2 + 0.1 * c, 0.0), (0.0, 0.0, 4.0), up=(0, -1, 0))
        Rs.append(p.rotation)
        ts.append(p.translation)
    Rs, ts = np.array(Rs), np.array(ts)
    ci = np.repeat(np.arange(n_cams), n_points)
    pi = np.tile(np.arange(n_points), n_cams)
    pc = camera_points(Rs, ts, pts, ci, pi)
    pix = pc[:, :2] / pc[:, 2:3] * [k.fx, k.fy] + [k.cx, k.cy]
    depth = pc[:, 2].copy()
    fixed = np.zeros(n_cams, bool)
    fixed[0] = True
    return BAProblem(Rs, ts, pts, ci, pi, pix, depth, sigma_rel * depth, fixed)


def _perturb(R, t, d6):
    dR = so3_exp(d6[3:])
    return dR @ R, dR @ t + d6[:3]


def jacobian_errors(rng, k=K, h=1e-6):
    """Relative error of analytic vs central-difference Jacobians at one random state.

    Returns (reprojection pose, reprojection point, depth pose, depth point).
    """
    R = random_rotation(rng)
    t = rng.normal(size=3)
    P, _ = points_in_view(rng, R, t, 1, k, 0.5, 10.0)
    P = P[0]
    obs = rng.uniform(0, 600, 2)
    d_obs = rng.uniform(0.5, 10.0)
    sigma = rng.uniform(0.01, 1.0)

    def res(R_, t_, P_):
        pc = (R_ @ P_ + t_)[None]
        return np.concatenate([reprojection_residuals(pc, obs[None], k)[0],
                               depth_residuals(pc, np.array([d_obs]), np.array([sigma]))])

    pc = (R @ P + t)[None]
    Jc, Jp = reprojection_jacobians(pc, R[None], k)
    Jdc, Jdp = depth_jacobians(pc, R[None], np.array([sigma]))
    A_pose = np.vstack([Jc[0], Jdc])
    A_point = np.vstack([Jp[0], Jdp])
    N_pose = np.zeros((3, 6))
    N_point = np.zeros((3, 3))
    for i in range(6):
        d = np.zeros(6)
        d[i] = h
        N_pose[:, i] = (res(*_perturb(R, t, d), P) - res(*_perturb(R, t, -d), P)) / (2 * h)
    for i in range(3):
        d = np.zeros(3)
        d[i] = h
        N_point[:, i] = (res(R, t, P + d) - res(R, t, P - d)) / (2 * h)

    def rel(a, n):
        return float(np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-12))

    return (rel(A_pose[:2], N_pose[:2]), rel(A_point[:2], N_point[:2]),
            rel(A_pose[2:], N_pose[2:]), rel(A_point[2:], N_point[2:]))


def brute_force_ate(est_xyz, gt_xyz, with_scale=False):
    """Horn's closed-form absolute orientation via the quaternion eigenproblem.

    Independent of the SVD-based Umeyama path: the rotation comes from the
    top eigenvector of the 4x4 symmetric matrix built from the cross
    covariance, scale from the ratio of spreads, and the RMSE is then
    accumulated with an explicit Python loop.
    """
    est = np.asarray(est_xyz, float)
    gt = np.asarray(gt_xyz, float)
    me, mg = est.mean(0), gt.mean(0)
    A, B = est - me, gt - mg
    S = A.T @ B
    Sxx, Sxy, Sxz = S[0]
    Syx, Syy, Syz = S[1]
    Szx, Szy, Szz = S[2]
    N = np.array([
        [Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx],
        [Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz],
        [Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy],
        [Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz]])
    vals, vecs = np.linalg.eigh(N)
    w, x, y, z = vecs[:, -1]
    R = np.array([[w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
                  [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
                  [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z]])
    s = 1.0
    if with_scale:
        s = float(np.trace(R @ S) / np.sum(A * A))
    total = 0.0
    for a, b in zip(A, B):
        d = s * (R @ a) - b
        total += float(d @ d)
    return (total / len(A)) ** 0.5
