"""Pinhole camera and rigid-motion math.

Poses are camera-from-world throughout. Pixel coordinates have their
origin at the center of the top-left pixel with ``v`` growing downward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .exceptions import BehindCameraError, InvalidDepthError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 2 or self.height < 2:
            raise ValueError("image must be at least 2x2 pixels")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for an image resampled by ``factor`` (pixel-center aware)."""
        return CameraIntrinsics(
            self.fx * factor,
            self.fy * factor,
            (self.cx + 0.5) * factor - 0.5,
            (self.cy + 0.5) * factor - 0.5,
            int(round(self.width * factor)),
            int(round(self.height * factor)),
        )

    def in_bounds(self, uv: np.ndarray) -> np.ndarray:
        """Mask of pixels whose nearest pixel center lies inside the image."""
        uv = np.asarray(uv, dtype=float)
        return (
            (uv[..., 0] >= 0)
            & (uv[..., 0] <= self.width - 1)
            & (uv[..., 1] >= 0)
            & (uv[..., 1] <= self.height - 1)
        )


def skew(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def so3_exp(w: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(w, dtype=float)).as_matrix()


def so3_log(R: np.ndarray) -> np.ndarray:
    return Rotation.from_matrix(R).as_rotvec()


def rotation_angle(R: np.ndarray) -> float:
    """Angle of a rotation matrix in radians, stable near zero."""
    c = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    s = np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    return float(np.arctan2(s, c))


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``x -> R x + t``; quaternion stored as (x, y, z, w)."""

    quat: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float).reshape(4)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0 or not np.all(np.isfinite(t)):
            raise ValueError("pose must be finite with a nonzero quaternion")
        q = q / n
        # canonical hemisphere keeps equal rotations bitwise equal
        if q[3] < 0:
            q = -q
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, R: np.ndarray, t=None) -> "Pose":
        R = np.asarray(R, dtype=float)
        if R.shape == (4, 4):
            R, t = R[:3, :3], R[:3, 3]
        if t is None:
            t = np.zeros(3)
        return cls(Rotation.from_matrix(R).as_quat(), t)

    @classmethod
    def from_rotvec(cls, w, t=None) -> "Pose":
        return cls(Rotation.from_rotvec(np.asarray(w, dtype=float)).as_quat(),
                   np.zeros(3) if t is None else t)

    @property
    def rotation(self) -> np.ndarray:
        return Rotation.from_quat(self.quat).as_matrix()

    @property
    def center(self) -> np.ndarray:
        """Origin of this frame expressed in the target frame of the inverse."""
        return -self.rotation.T @ self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __repr__(self):
        q = np.array2string(self.quat, precision=6)
        t = np.array2string(self.translation, precision=6)
        return f"Pose(quat={q}, translation={t})"


def transform(T: Pose, P: np.ndarray) -> np.ndarray:
    """Rotate then translate point(s) ``P``."""
    return T.apply(P)


def compose(A: Pose, B: Pose) -> Pose:
    """``A`` after ``B``: ``compose(A, B).apply(x) == A.apply(B.apply(x))``."""
    rA, rB = Rotation.from_quat(A.quat), Rotation.from_quat(B.quat)
    return Pose((rA * rB).as_quat(), rA.apply(B.translation) + A.translation)


def inverse(T: Pose) -> Pose:
    r = Rotation.from_quat(T.quat).inv()
    return Pose(r.as_quat(), -r.apply(T.translation))


def backproject(p, d: float, k: CameraIntrinsics) -> np.ndarray:
    """Lift pixel(s) ``p`` at z-depth(s) ``d`` into the camera frame.

    Works on a single pixel ``(u, v)`` or an ``(N, 2)`` array with ``(N,)`` depths.
    """
    p = np.asarray(p, dtype=float)
    d = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise InvalidDepthError(f"depth must be finite and positive, got {d}")
    x = (p[..., 0] - k.cx) * d / k.fx
    y = (p[..., 1] - k.cy) * d / k.fy
    return np.stack([x, y, np.broadcast_to(d, x.shape)], axis=-1)


def project(P, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection; result may fall outside the image."""
    P = np.asarray(P, dtype=float)
    z = P[..., 2]
    if np.any(~(z > 0)):
        raise BehindCameraError("point at or behind the camera plane")
    return np.stack([k.fx * P[..., 0] / z + k.cx, k.fy * P[..., 1] / z + k.cy], axis=-1)


def project_unchecked(P: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Vectorized projection that tolerates z <= 0 (returns garbage there)."""
    z = P[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.stack([k.fx * P[..., 0] / z + k.cx, k.fy * P[..., 1] / z + k.cy], axis=-1)


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-from-world pose of a camera at ``position`` looking at ``target``.

    Camera axes: x right, y down, z forward. ``up`` is the world up direction.
    """
    position = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("viewing direction parallel to up vector")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R_wc = np.column_stack([right, down, forward])
    R_cw = R_wc.T
    return Pose.from_matrix(R_cw, -R_cw @ position)


def nearest_pixel(uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column and row indices of the pixel centers nearest to ``uv`` (half rounds up)."""
    uv = np.asarray(uv, dtype=np.float64)
    return (np.floor(uv[..., 0] + 0.5).astype(np.intp),
            np.floor(uv[..., 1] + 0.5).astype(np.intp))
