"""Windowed bundle adjustment with Huber reprojection terms and unary depth priors.

Cost::

    sum_obs huber(||pi(R_c P_p + t_c) - u_obs||)  +  sum_obs ((d_obs - z_cam) / sigma_d) ** 2

Camera updates are left-multiplied: ``R <- exp(phi) R``, ``t <- exp(phi) t + rho``
with the 6-vector ordered ``(rho, phi)``. Depth observations are never
modified. Solved by Levenberg-Marquardt on the Schur-reduced camera system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import CameraIntrinsics, skew, so3_exp

DEFAULT_HUBER_DELTA = 2.45


@dataclass
class BAProblem:
    """Observation table over a set of camera poses and points.

    ``depth_obs`` is NaN where an observation carries no depth prior.
    """

    rotations: np.ndarray
    translations: np.ndarray
    points: np.ndarray
    cam_idx: np.ndarray
    pt_idx: np.ndarray
    pixels: np.ndarray
    depth_obs: np.ndarray
    sigma_d: np.ndarray
    fixed: np.ndarray

    def __post_init__(self):
        self.rotations = np.array(self.rotations, dtype=float).reshape(-1, 3, 3)
        self.translations = np.array(self.translations, dtype=float).reshape(-1, 3)
        self.points = np.array(self.points, dtype=float).reshape(-1, 3)
        self.cam_idx = np.asarray(self.cam_idx, dtype=np.intp)
        self.pt_idx = np.asarray(self.pt_idx, dtype=np.intp)
        self.pixels = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        self.depth_obs = np.asarray(self.depth_obs, dtype=float).reshape(-1)
        self.sigma_d = np.broadcast_to(np.asarray(self.sigma_d, dtype=float), self.depth_obs.shape).copy()
        self.fixed = np.asarray(self.fixed, dtype=bool).reshape(-1)

    @property
    def n_cams(self) -> int:
        return len(self.rotations)

    @property
    def n_points(self) -> int:
        return len(self.points)

    def copy(self) -> "BAProblem":
        return BAProblem(self.rotations.copy(), self.translations.copy(), self.points.copy(),
                         self.cam_idx, self.pt_idx, self.pixels, self.depth_obs.copy(),
                         self.sigma_d, self.fixed)


def camera_points(rotations, translations, points, cam_idx, pt_idx) -> np.ndarray:
    R = rotations[cam_idx]
    return np.einsum("mij,mj->mi", R, points[pt_idx]) + translations[cam_idx]


def reprojection_residuals(pc: np.ndarray, pixels: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    z = pc[:, 2]
    return np.stack([k.fx * pc[:, 0] / z + k.cx, k.fy * pc[:, 1] / z + k.cy], axis=-1) - pixels


def reprojection_jacobians(pc: np.ndarray, R_obs: np.ndarray, k: CameraIntrinsics):
    """d(residual)/d(pose update) as (M, 2, 6) and d(residual)/d(point) as (M, 2, 3)."""
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    iz = 1.0 / z
    Jproj = np.zeros((len(pc), 2, 3))
    Jproj[:, 0, 0] = k.fx * iz
    Jproj[:, 0, 2] = -k.fx * x * iz * iz
    Jproj[:, 1, 1] = k.fy * iz
    Jproj[:, 1, 2] = -k.fy * y * iz * iz
    J_pose = np.concatenate([Jproj, -Jproj @ skew(pc)], axis=2)
    J_point = Jproj @ R_obs
    return J_pose, J_point


def depth_residuals(pc: np.ndarray, depth_obs: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return (depth_obs - pc[:, 2]) / sigma


def depth_jacobians(pc: np.ndarray, R_obs: np.ndarray, sigma: np.ndarray):
    """d(depth residual)/d(pose update) as (M, 6) and d/d(point) as (M, 3)."""
    inv = -1.0 / sigma
    J_pose = np.zeros((len(pc), 6))
    J_pose[:, 2] = inv
    # z-row of -[pc]x
    J_pose[:, 3] = inv * pc[:, 1]
    J_pose[:, 4] = -inv * pc[:, 0]
    J_point = inv[:, None] * R_obs[:, 2, :]
    return J_pose, J_point


def huber(e: np.ndarray, delta: float) -> np.ndarray:
    """Huber cost of residual norms: ``e**2`` inside, ``2 delta e - delta**2`` outside."""
    return np.where(e <= delta, e * e, 2.0 * delta * e - delta * delta)


def total_cost(problem: BAProblem, k: CameraIntrinsics, delta: float,
               rotations=None, translations=None, points=None) -> float:
    R = problem.rotations if rotations is None else rotations
    t = problem.translations if translations is None else translations
    P = problem.points if points is None else points
    pc = camera_points(R, t, P, problem.cam_idx, problem.pt_idx)
    if np.any(pc[:, 2] <= 1e-9):
        return np.inf
    e = np.linalg.norm(reprojection_residuals(pc, problem.pixels, k), axis=1)
    cost = float(np.sum(huber(e, delta)))
    has_d = ~np.isnan(problem.depth_obs)
    if has_d.any():
        rd = depth_residuals(pc[has_d], problem.depth_obs[has_d], problem.sigma_d[has_d])
        cost += float(np.sum(rd * rd))
    return cost


@dataclass
class BAResult:
    rotations: np.ndarray
    translations: np.ndarray
    points: np.ndarray
    initial_cost: float
    final_cost: float
    iterations: int
    cost_history: list = field(default_factory=list)


class CostIncreaseError(AssertionError):
    pass


# accepted-step bookkeeping for health reports
STATS = {"solves": 0, "accepted_steps": 0, "violations": 0}


def solve(problem: BAProblem, k: CameraIntrinsics, huber_delta: float = DEFAULT_HUBER_DELTA,
          max_iterations: int = 20, rel_tol: float = 1e-6, initial_lambda: float = 1e-4) -> BAResult:
    """Levenberg-Marquardt over free cameras and all points."""
    R = problem.rotations.copy()
    t = problem.translations.copy()
    P = problem.points.copy()
    ci, pi = problem.cam_idx, problem.pt_idx
    has_d = ~np.isnan(problem.depth_obs)
    free = ~problem.fixed
    cam_slot = np.cumsum(free) - 1
    F = int(free.sum())
    n_pts = len(P)
    cost = total_cost(problem, k, huber_delta, R, t, P)
    initial = cost
    history = [cost]
    lam = initial_lambda
    it = 0
    STATS["solves"] += 1
    obs_free = free[ci]
    slot = cam_slot[ci]
    done = False
    while not done and it < max_iterations and cost > 1e-30 and np.isfinite(cost):
        pc = camera_points(R, t, P, ci, pi)
        Robs = R[ci]
        r = reprojection_residuals(pc, problem.pixels, k)
        Jc, Jp = reprojection_jacobians(pc, Robs, k)
        e = np.linalg.norm(r, axis=1)
        w = np.where(e <= huber_delta, 1.0, huber_delta / np.maximum(e, 1e-300))

        # point blocks V, gradient gp
        V = np.zeros((n_pts, 3, 3))
        gp = np.zeros((n_pts, 3))
        np.add.at(V, pi, w[:, None, None] * np.einsum("mki,mkj->mij", Jp, Jp))
        np.add.at(gp, pi, w[:, None] * np.einsum("mki,mk->mi", Jp, r))
        U = np.zeros((F, 6, 6))
        gc = np.zeros((F, 6))
        W = np.zeros((n_pts, F, 6, 3))
        fo = obs_free
        if F:
            np.add.at(U, slot[fo], w[fo, None, None] * np.einsum("mki,mkj->mij", Jc[fo], Jc[fo]))
            np.add.at(gc, slot[fo], w[fo, None] * np.einsum("mki,mk->mi", Jc[fo], r[fo]))
            np.add.at(W, (pi[fo], slot[fo]), w[fo, None, None] * np.einsum("mki,mkj->mij", Jc[fo], Jp[fo]))
        if has_d.any():
            rd = depth_residuals(pc[has_d], problem.depth_obs[has_d], problem.sigma_d[has_d])
            Jdc, Jdp = depth_jacobians(pc[has_d], Robs[has_d], problem.sigma_d[has_d])
            pd = pi[has_d]
            np.add.at(V, pd, np.einsum("mi,mj->mij", Jdp, Jdp))
            np.add.at(gp, pd, Jdp * rd[:, None])
            fd = obs_free[has_d]
            if F and fd.any():
                sd = slot[has_d][fd]
                np.add.at(U, sd, np.einsum("mi,mj->mij", Jdc[fd], Jdc[fd]))
                np.add.at(gc, sd, Jdc[fd] * rd[fd, None])
                np.add.at(W, (pd[fd], sd), np.einsum("mi,mj->mij", Jdc[fd], Jdp[fd]))
        W = W.reshape(n_pts, 6 * F, 3)
        U_full = np.zeros((6 * F, 6 * F))
        for c in range(F):
            U_full[6 * c:6 * c + 6, 6 * c:6 * c + 6] = U[c]
        gc = gc.reshape(-1)
        diagV = np.einsum("pii->pi", V)
        diagU = np.diag(U_full).copy()

        accepted = False
        while it < max_iterations:
            it += 1
            Vd = V.copy()
            idx = np.arange(3)
            Vd[:, idx, idx] += lam * np.maximum(diagV, 1e-9) + 1e-12
            Vinv = np.linalg.inv(Vd)
            if F:
                S = U_full.copy()
                S[np.diag_indices(6 * F)] += lam * np.maximum(diagU, 1e-9) + 1e-12
                Y = np.einsum("pij,pjk->pik", W, Vinv)
                S -= np.einsum("pik,pjk->ij", Y, W)
                rhs = -gc + np.einsum("pik,pk->i", Y, gp)
                try:
                    dc = np.linalg.solve(S, rhs)
                except np.linalg.LinAlgError:
                    lam *= 10
                    continue
                dp = np.einsum("pij,pj->pi", Vinv, -gp - np.einsum("pji,j->pi", W, dc))
            else:
                dc = np.zeros(0)
                dp = np.einsum("pij,pj->pi", Vinv, -gp)
            R_new, t_new = R.copy(), t.copy()
            free_ids = np.flatnonzero(free)
            for s_, c in enumerate(free_ids):
                d6 = dc[6 * s_:6 * s_ + 6]
                dR = so3_exp(d6[3:])
                R_new[c] = dR @ R[c]
                t_new[c] = dR @ t[c] + d6[:3]
            P_new = P + dp
            new_cost = total_cost(problem, k, huber_delta, R_new, t_new, P_new)
            if np.isfinite(new_cost) and new_cost <= cost:
                if new_cost > history[-1]:
                    STATS["violations"] += 1
                    raise CostIncreaseError("accepted step increased the cost")
                STATS["accepted_steps"] += 1
                decrease = cost - new_cost
                R, t, P = R_new, t_new, P_new
                prev_cost, cost = cost, new_cost
                history.append(cost)
                lam = max(lam / 10.0, 1e-12)
                accepted = True
                done = prev_cost <= 0 or decrease / prev_cost < rel_tol
                break
            lam *= 10.0
            if lam > 1e12:
                done = True
                break
        if not accepted:
            break
    return BAResult(R, t, P, initial, cost, it, history)
