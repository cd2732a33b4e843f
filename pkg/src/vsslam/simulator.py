"""Analytic scene and camera-trajectory generator.

Scenes are an axis-aligned room whose inner faces carry textured landmarks,
plus spheres that move along sinusoidal paths. Depth and instance masks are
produced by casting one ray per pixel center against these primitives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset_io import (
    InstanceMask,
    Trajectory,
    frame_stem,
    make_keypoints,
    parse_kv,
    read_kv,
    write_depth,
    write_keypoints,
    write_mask,
    write_sequence_cfg,
    write_trajectory,
)
from .descriptors import pairwise_hamming
from .exceptions import ConfigError, GenerationError, RenderError
from .geometry import CameraIntrinsics, Pose, inverse, look_at, nearest_pixel, so3_exp

MIN_DESCRIPTOR_DISTANCE = 80
OCCLUSION_TOLERANCE = 1e-4
TRAJECTORY_KINDS = ("orbit", "xyz-sinusoid", "rpy-oscillation", "halfsphere")


@dataclass(frozen=True)
class ObjectSpec:
    """A sphere oscillating as ``center + amplitude * sin(2 pi t / period + phase)``."""

    center: tuple
    radius: float
    class_id: int
    amplitude: tuple = (0.0, 0.0, 0.0)
    period: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigError("sphere radius must be positive")
        if self.period <= 0:
            raise ConfigError("object period must be positive")


@dataclass
class SceneConfig:
    room: tuple = (6.0, 6.0, 3.0)
    landmarks: int = 1500
    objects: list = field(default_factory=list)
    object_landmarks: int = 80


@dataclass
class DynamicObject:
    spec: ObjectSpec
    instance_id: int
    offsets: np.ndarray
    descriptors: np.ndarray
    landmark_ids: np.ndarray

    @property
    def radius(self) -> float:
        return self.spec.radius

    @property
    def class_id(self) -> int:
        return self.spec.class_id

    def center_at(self, t: float) -> np.ndarray:
        s = self.spec
        return np.asarray(s.center, float) + np.asarray(s.amplitude, float) * np.sin(
            2 * np.pi * t / s.period + s.phase)

    def surface_points(self, t: float) -> np.ndarray:
        return self.center_at(t) + self.radius * self.offsets


@dataclass
class Scene:
    lo: np.ndarray
    hi: np.ndarray
    landmarks: np.ndarray
    descriptors: np.ndarray
    landmark_ids: np.ndarray
    dynamics: list

    @property
    def n_landmarks(self) -> int:
        return len(self.landmarks)

    def all_descriptors(self) -> np.ndarray:
        parts = [self.descriptors] + [d.descriptors for d in self.dynamics]
        return np.concatenate(parts) if parts else np.zeros((0, 32), np.uint8)


def _separate_descriptors(rng, n: int, min_distance: int, max_retries: int = 50) -> np.ndarray:
    desc = rng.integers(0, 256, size=(n, 32), dtype=np.uint8)
    if n < 2:
        return desc
    for _ in range(max_retries):
        bad = set()
        block = 512
        for i0 in range(0, n, block):
            d = pairwise_hamming(desc[i0:i0 + block], desc)
            rows, cols = np.nonzero(d < min_distance)
            for r, c in zip(rows + i0, cols):
                if r < c:
                    bad.add(int(c))
        if not bad:
            return desc
        idx = np.array(sorted(bad))
        desc[idx] = rng.integers(0, 256, size=(len(idx), 32), dtype=np.uint8)
    raise GenerationError(
        f"could not separate {n} descriptors by {min_distance} bits after {max_retries} retries")


def _sample_faces(rng, n: int, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    size = hi - lo
    # faces: (fixed axis, side); area-weighted choice
    faces = [(a, s) for a in range(3) for s in (0, 1)]
    areas = np.array([np.prod(np.delete(size, a)) for a, _ in faces])
    choice = rng.choice(len(faces), size=n, p=areas / areas.sum())
    pts = lo + rng.random((n, 3)) * size
    for f, (axis, side) in enumerate(faces):
        sel = choice == f
        pts[sel, axis] = hi[axis] if side else lo[axis]
    return pts


def _unit_vectors(rng, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def build_scene(cfg: SceneConfig, seed: int) -> Scene:
    """Deterministically sample landmarks, descriptors and dynamic spheres."""
    rng = np.random.default_rng(seed)
    room = np.asarray(cfg.room, dtype=float)
    if room.shape != (3,) or np.any(room <= 0):
        raise ConfigError("room must be three positive extents")
    if cfg.landmarks < 0 or cfg.object_landmarks < 0:
        raise ConfigError("landmark counts must be non-negative")
    lo = np.array([-room[0] / 2, -room[1] / 2, 0.0])
    hi = np.array([room[0] / 2, room[1] / 2, room[2]])
    n_static = int(cfg.landmarks)
    n_dyn = int(cfg.object_landmarks) * len(cfg.objects)
    descriptors = _separate_descriptors(rng, n_static + n_dyn, MIN_DESCRIPTOR_DISTANCE)
    landmarks = _sample_faces(rng, n_static, lo, hi)
    dynamics = []
    next_id = n_static
    for k, spec in enumerate(cfg.objects):
        m = int(cfg.object_landmarks)
        dynamics.append(DynamicObject(
            spec=spec,
            instance_id=k + 1,
            offsets=_unit_vectors(rng, m),
            descriptors=descriptors[next_id:next_id + m],
            landmark_ids=np.arange(next_id, next_id + m),
        ))
        next_id += m
    return Scene(lo, hi, landmarks, descriptors[:n_static], np.arange(n_static), dynamics)


@dataclass(frozen=True)
class TrajectorySpec:
    """Parametric camera motion around a base pose looking from ``position`` to ``target``.

    ``amplitude`` is meters for ``xyz-sinusoid``, a camera-frame rotation
    vector (radians) for ``rpy-oscillation`` and (azimuth, elevation)
    radians for ``halfsphere``. ``orbit`` makes one revolution per period
    about the vertical axis through ``target``.
    """

    kind: str = "orbit"
    position: tuple = (1.0, 0.0, 1.5)
    target: tuple = (0.0, 0.0, 1.5)
    amplitude: tuple = (0.0, 0.0, 0.0)
    period: float = 10.0
    duration: float = 10.0
    fps: float = 30.0

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ConfigError(f"unknown trajectory kind {self.kind!r}")
        if self.period <= 0 or self.fps <= 0 or self.duration < 0:
            raise ConfigError("period and fps must be positive, duration non-negative")

    @property
    def frame_count(self) -> int:
        return int(round(self.duration * self.fps))

    @property
    def base_pose(self) -> Pose:
        return look_at(self.position, self.target)


def _rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def camera_pose_at(spec: TrajectorySpec, t: float) -> Pose:
    """Camera-from-world pose at time ``t`` seconds."""
    if not (-1e-12 <= t <= spec.duration + 1e-9):
        raise ValueError(f"time {t} outside [0, {spec.duration}]")
    base = spec.base_pose
    R_wc0 = base.rotation.T
    c0 = np.asarray(spec.position, dtype=float)
    target = np.asarray(spec.target, dtype=float)
    amp = np.asarray(spec.amplitude, dtype=float)
    phase = 2 * np.pi * t / spec.period
    if t == 0:
        return base
    if spec.kind == "xyz-sinusoid":
        center, R_wc = c0 + amp * np.sin(phase), R_wc0
    elif spec.kind == "rpy-oscillation":
        center, R_wc = c0, R_wc0 @ so3_exp(amp * np.sin(phase))
    else:
        if spec.kind == "orbit":
            G = _rot_z(phase)
        else:
            right = R_wc0[:, 0]
            G = _rot_z(amp[0] * np.sin(phase)) @ so3_exp(right * amp[1] * np.sin(2 * phase))
        center, R_wc = target + G @ (c0 - target), G @ R_wc0
    R_cw = R_wc.T
    return Pose.from_matrix(R_cw, -R_cw @ center)


def ray_sphere(origin: np.ndarray, dirs: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Smallest positive ray parameter hitting the sphere, ``inf`` on a miss."""
    oc = origin - center
    a = np.einsum("ij,ij->i", dirs, dirs)
    b = dirs @ oc
    c = oc @ oc - radius * radius
    disc = b * b - a * c
    out = np.full(len(dirs), np.inf)
    hit = disc >= 0
    sq = np.sqrt(disc[hit])
    near = (-b[hit] - sq) / a[hit]
    far = (-b[hit] + sq) / a[hit]
    t = np.where(near > 0, near, np.where(far > 0, far, np.inf))
    out[hit] = t
    return out


def ray_box_exit(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Ray parameter where rays starting inside the box leave it."""
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = np.where(dirs > 0, hi, lo)
        t = (bound - origin) / dirs
    t = np.where(dirs == 0, np.inf, t)
    return t.min(axis=1)


@dataclass
class GroundTruthFrame:
    pose: Pose
    keypoints: np.ndarray
    depth: np.ndarray
    masks: InstanceMask
    landmark_ids: np.ndarray


class Renderer:
    """Ray-casts a scene through pixel centers for a fixed camera."""

    def __init__(self, scene: Scene, k: CameraIntrinsics):
        self.scene = scene
        self.k = k
        uu, vv = np.meshgrid(np.arange(k.width, dtype=float), np.arange(k.height, dtype=float))
        self._pixel_rays = np.stack(
            [(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=-1).reshape(-1, 3)

    def cast(self, pose: Pose, rays_cam: np.ndarray, t: float):
        """z-depth and instance id of the nearest hit for camera-frame rays with z = 1."""
        R_wc = pose.rotation.T
        origin = pose.center
        if np.any(origin <= self.scene.lo) or np.any(origin >= self.scene.hi):
            raise RenderError(f"camera center {origin} outside the room")
        dirs = rays_cam @ R_wc.T
        depth = ray_box_exit(origin, dirs, self.scene.lo, self.scene.hi)
        ids = np.zeros(len(dirs), dtype=np.uint16)
        for obj in self.scene.dynamics:
            center = obj.center_at(t)
            if np.linalg.norm(origin - center) <= obj.radius:
                raise RenderError(f"camera inside object {obj.instance_id}")
            hit = ray_sphere(origin, dirs, center, obj.radius)
            closer = hit < depth
            depth[closer] = hit[closer]
            ids[closer] = obj.instance_id
        return depth, ids

    def render(self, pose: Pose, t: float = 0.0) -> GroundTruthFrame:
        k, scene = self.k, self.scene
        depth, ids = self.cast(pose, self._pixel_rays, t)
        depth = depth.reshape(k.height, k.width)
        ids = ids.reshape(k.height, k.width)

        world = [scene.landmarks] + [o.surface_points(t) for o in scene.dynamics]
        descs = [scene.descriptors] + [o.descriptors for o in scene.dynamics]
        lids = [scene.landmark_ids] + [o.landmark_ids for o in scene.dynamics]
        owner = np.concatenate([np.zeros(len(scene.landmarks), np.uint16)]
                               + [np.full(len(o.offsets), o.instance_id, np.uint16)
                                  for o in scene.dynamics])
        pts_w = np.concatenate(world) if world else np.zeros((0, 3))
        desc = np.concatenate(descs)
        lid = np.concatenate(lids)

        pc = pose.apply(pts_w)
        z = pc[:, 2]
        front = z > 1e-6
        uv = np.zeros((len(pc), 2))
        uv[front] = pc[front, :2] / z[front, None] * [k.fx, k.fy] + [k.cx, k.cy]
        cand = np.flatnonzero(front & k.in_bounds(uv))
        if len(cand):
            rays = pc[cand] / z[cand, None]
            hit, _ = self.cast(pose, rays, t)
            cand = cand[np.abs(hit - z[cand]) <= OCCLUSION_TOLERANCE]
        # one keypoint per pixel: nearest landmark wins
        cu, cv = nearest_pixel(uv[cand].astype(np.float32))
        flat = cv * k.width + cu
        order = np.lexsort((lid[cand], z[cand]))
        _, first = np.unique(flat[order], return_index=True)
        keep = np.sort(cand[order[first]])
        uv32 = uv[keep].astype(np.float32)
        ku, kv = nearest_pixel(uv32)
        depth[kv, ku] = z[keep]
        # a keypoint carries its own surface's label even on silhouette pixels
        ids[kv, ku] = owner[keep]

        zk = z[keep]
        octave = np.zeros(len(keep), dtype=np.uint8)
        if len(keep):
            octave = np.searchsorted(np.quantile(zk, [0.25, 0.5, 0.75]), zk, side="right").astype(np.uint8)
        kpts = make_keypoints(uv32, desc[keep], response=1.0 / zk, octave=octave)
        instances = tuple((o.instance_id, o.class_id) for o in scene.dynamics
                          if np.any(ids == o.instance_id))
        masks = InstanceMask(ids, instances)
        return GroundTruthFrame(pose, kpts, depth.astype(np.float32), masks, lid[keep])


def render_frame(scene: Scene, pose: Pose, k: CameraIntrinsics, t: float = 0.0) -> GroundTruthFrame:
    return Renderer(scene, k).render(pose, t)


def ground_truth_trajectory(spec: TrajectorySpec, frame_count: int | None = None) -> Trajectory:
    n = spec.frame_count if frame_count is None else frame_count
    times = np.arange(n) / spec.fps
    return Trajectory.from_poses(times, [inverse(camera_pose_at(spec, t)) for t in times])


def export_sequence(scene: Scene, spec: TrajectorySpec, k: CameraIntrinsics, out_dir,
                    dynamic_classes=None) -> Path:
    """Write ``sequence.cfg``, ``groundtruth.txt`` and per-frame rasters."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    n = spec.frame_count
    extra = {}
    if dynamic_classes is not None:
        extra["dynamic_classes"] = ",".join(str(c) for c in sorted(dynamic_classes))
    write_sequence_cfg(out / "sequence.cfg", spec.fps, n, k, **extra)
    write_trajectory(out / "groundtruth.txt", ground_truth_trajectory(spec),
                     header="ground truth, world-from-camera")
    renderer = Renderer(scene, k)
    for i in range(n):
        t = i / spec.fps
        frame = renderer.render(camera_pose_at(spec, t), t)
        stem = out / "frames" / frame_stem(i)
        write_depth(stem.with_suffix(".depth"), frame.depth)
        write_mask(stem.with_suffix(".mask"), frame.masks)
        write_keypoints(stem.with_suffix(".kpts"), frame.keypoints)
    return out


# -- config files ------------------------------------------------------------

def _floats(value: str, n: int | None = None, key: str = "") -> tuple:
    try:
        vals = tuple(float(x) for x in value.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key}: expected numbers, got {value!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{key}: expected {n} values, got {len(vals)}")
    return vals


@dataclass
class SimulationConfig:
    scene: SceneConfig
    trajectory: TrajectorySpec
    intrinsics: CameraIntrinsics
    seed: int = 0
    dynamic_classes: tuple = (1,)


DEFAULT_INTRINSICS = CameraIntrinsics(500.0, 500.0, 319.5, 239.5, 640, 480)


def simulation_config_from_kv(values: dict) -> SimulationConfig:
    """Build a :class:`SimulationConfig` from parsed ``key = value`` pairs.

    Object lines look like ``object.1 = cx,cy,cz,radius,class,ax,ay,az,period[,phase]``.
    """
    v = dict(values)
    scene = SceneConfig()
    try:
        if "room" in v:
            scene.room = _floats(v.pop("room"), 3, "room")
        if "landmarks" in v:
            scene.landmarks = int(v.pop("landmarks"))
        if "object_landmarks" in v:
            scene.object_landmarks = int(v.pop("object_landmarks"))
        for key in sorted(k for k in v if k.startswith("object.")):
            f = _floats(v.pop(key), None, key)
            if len(f) not in (9, 10):
                raise ConfigError(f"{key}: expected 9 or 10 values")
            scene.objects.append(ObjectSpec(tuple(f[0:3]), f[3], int(f[4]), tuple(f[5:8]), f[8],
                                            f[9] if len(f) == 10 else 0.0))
        kd = DEFAULT_INTRINSICS
        k = CameraIntrinsics(
            float(v.pop("fx", kd.fx)), float(v.pop("fy", kd.fy)),
            float(v.pop("cx", kd.cx)), float(v.pop("cy", kd.cy)),
            int(v.pop("width", kd.width)), int(v.pop("height", kd.height)))
        d = TrajectorySpec()
        traj = TrajectorySpec(
            kind=v.pop("trajectory", d.kind),
            position=_floats(v.pop("position"), 3, "position") if "position" in v else d.position,
            target=_floats(v.pop("target"), 3, "target") if "target" in v else d.target,
            amplitude=_floats(v.pop("amplitude"), 3, "amplitude") if "amplitude" in v else d.amplitude,
            period=float(v.pop("period", d.period)),
            duration=float(v.pop("duration", d.duration)),
            fps=float(v.pop("fps", d.fps)),
        )
        seed = int(v.pop("seed", 0))
        dyn = tuple(int(x) for x in v.pop("dynamic_classes", "1").replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if v:
        raise ConfigError(f"unknown scene config keys: {', '.join(sorted(v))}")
    return SimulationConfig(scene, traj, k, seed, dyn)


def load_simulation_config(path) -> SimulationConfig:
    return simulation_config_from_kv(read_kv(path))


def parse_simulation_config(text: str) -> SimulationConfig:
    return simulation_config_from_kv(parse_kv(text))
