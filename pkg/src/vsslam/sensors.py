"""Virtual sensors: file-backed or synthetic depth, instance masks and keypoints.

Noise models perturb ground-truth streams in a controlled way so that
downstream experiments can dial in scale instability, descriptor flips or
mask boundary errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataset_io import InstanceMask, SequenceInfo, load_frame_bundle, open_sequence
from .exceptions import EndOfSequence
from .morphology import dilate, erode


@dataclass
class SensorFrame:
    timestamp: float
    keypoints: np.ndarray
    depth: np.ndarray
    masks: InstanceMask
    index: int = 0
    image: np.ndarray | None = None

    def __post_init__(self):
        if self.depth.shape != self.masks.shape:
            raise ValueError("depth and mask rasters differ in size")
        if self.image is not None and self.image.shape[:2] != self.depth.shape:
            raise ValueError("image raster differs in size")

    @property
    def shape(self):
        return self.depth.shape


@dataclass(frozen=True)
class DepthNoiseModel:
    scale_cv: float = 0.0
    ar1_phi: float = 0.0
    additive_sigma: float = 0.0
    rel_sigma: float = 0.0
    dropout_rate: float = 0.0
    distance_bias_gain: float = 0.0

    def __post_init__(self):
        if self.scale_cv < 0:
            raise ValueError("scale_cv must be >= 0")
        if not 0.0 <= self.ar1_phi <= 1.0:
            raise ValueError("ar1_phi must lie in [0, 1]")
        if self.additive_sigma < 0 or self.rel_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def log_scale_sigma(self) -> float:
        """Stationary std of log s_t giving a lognormal CV of ``scale_cv``."""
        return float(np.sqrt(np.log1p(self.scale_cv ** 2)))

    @property
    def is_zero(self) -> bool:
        return self == DepthNoiseModel()


@dataclass(frozen=True)
class DescriptorNoiseModel:
    flip_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob < 0.5:
            raise ValueError("flip_prob must lie in [0, 0.5)")


@dataclass(frozen=True)
class MaskNoiseModel:
    boundary_jitter_px: int = 0
    miss_rate: float = 0.0

    def __post_init__(self):
        if int(self.boundary_jitter_px) != self.boundary_jitter_px:
            raise ValueError("boundary_jitter_px must be an integer")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError("miss_rate must lie in [0, 1]")


@dataclass
class DepthNoiseState:
    """Latent AR(1) log-scale carried from frame to frame."""

    log_scale: float | None = None
    scales: list = field(default_factory=list)


def perturb_depth(gt: np.ndarray, model: DepthNoiseModel, state: DepthNoiseState,
                  rng: np.random.Generator) -> np.ndarray:
    """Apply global scale, distance bias, pixel noise and dropout to a depth raster.

    The log-scale follows ``log s_t = phi * log s_{t-1} + w_t`` and is started
    from its stationary distribution, so every frame has scale CV ``scale_cv``.
    Invalid input pixels (<= 0) stay invalid.
    """
    sigma_l = model.log_scale_sigma
    if state.log_scale is None:
        log_s = rng.normal(0.0, sigma_l) if sigma_l > 0 else 0.0
    else:
        innovation = sigma_l * np.sqrt(max(0.0, 1.0 - model.ar1_phi ** 2))
        log_s = model.ar1_phi * state.log_scale + (rng.normal(0.0, innovation) if innovation > 0 else 0.0)
    state.log_scale = log_s
    s = float(np.exp(log_s))
    state.scales.append(s)

    gt = np.asarray(gt, dtype=np.float32)
    valid = gt > 0
    g = gt.astype(np.float64)
    out = s * g
    if model.distance_bias_gain:
        out = out * (1.0 + model.distance_bias_gain * g)
    if model.additive_sigma or model.rel_sigma:
        out = out + rng.standard_normal(g.shape) * (model.additive_sigma + model.rel_sigma * g)
    if model.dropout_rate:
        valid = valid & (rng.random(g.shape) >= model.dropout_rate)
    out = np.where(valid & (out > 0), out, 0.0)
    return out.astype(np.float32)


def perturb_descriptors(records: np.ndarray, model: DescriptorNoiseModel,
                        rng: np.random.Generator) -> np.ndarray:
    """Flip every descriptor bit independently with probability ``flip_prob``."""
    out = records.copy()
    if model.flip_prob == 0 or len(out) == 0:
        return out
    flips = rng.random((len(out), 256)) < model.flip_prob
    out["descriptor"] = out["descriptor"] ^ np.packbits(flips, axis=1)
    return out


def perturb_masks(gt: InstanceMask, model: MaskNoiseModel,
                  rng: np.random.Generator) -> InstanceMask:
    """Drop whole instances and erode/dilate the survivors by the jitter radius."""
    if model.miss_rate == 0 and model.boundary_jitter_px == 0:
        return InstanceMask(gt.ids.copy(), gt.instances)
    ids = gt.ids
    keep_flags = rng.random(len(gt.instances)) >= model.miss_rate
    kept = [inst for inst, keep in zip(gt.instances, keep_flags) if keep]
    out = np.zeros_like(ids)
    r = int(model.boundary_jitter_px)
    for inst_id, _ in kept:
        region = ids == inst_id
        if r > 0:
            region = dilate(region, r)
            region &= out == 0
        elif r < 0:
            region = erode(region, -r)
        out[region] = inst_id
    present = set(np.unique(out).tolist())
    return InstanceMask(out, tuple(inst for inst in kept if inst[0] in present))


@dataclass
class NoiseConfig:
    depth: DepthNoiseModel = field(default_factory=DepthNoiseModel)
    descriptors: DescriptorNoiseModel = field(default_factory=DescriptorNoiseModel)
    masks: MaskNoiseModel = field(default_factory=MaskNoiseModel)


class FileBackedSensor:
    """Cursor over a dataset-io sequence directory."""

    def __init__(self, sequence_dir):
        self.info: SequenceInfo = open_sequence(sequence_dir)
        self.cursor = 0

    @property
    def intrinsics(self):
        return self.info.intrinsics

    def __len__(self):
        return self.info.frame_count

    def next(self) -> SensorFrame:
        if self.cursor >= self.info.frame_count:
            raise EndOfSequence(f"sequence exhausted after {self.info.frame_count} frames")
        index = self.cursor
        self.cursor += 1
        b = load_frame_bundle(self.info.root, index, self.info)
        return SensorFrame(b.timestamp, b.keypoints, b.depth, b.masks, index=index)

    def __iter__(self):
        return self

    def __next__(self) -> SensorFrame:
        return self.next()


class NoisySensor:
    """Wrap any frame stream and perturb it with seeded noise models."""

    def __init__(self, source, noise: NoiseConfig | None = None, seed: int = 0):
        self.source = source
        self.noise = noise or NoiseConfig()
        self.rng = np.random.default_rng(seed)
        self.depth_state = DepthNoiseState()

    @property
    def intrinsics(self):
        return self.source.intrinsics

    def __len__(self):
        return len(self.source)

    def __iter__(self):
        return self

    def __next__(self) -> SensorFrame:
        f = next(self.source)
        depth = perturb_depth(f.depth, self.noise.depth, self.depth_state, self.rng)
        kpts = perturb_descriptors(f.keypoints, self.noise.descriptors, self.rng)
        masks = perturb_masks(f.masks, self.noise.masks, self.rng)
        return replace(f, keypoints=kpts, depth=depth, masks=masks)


class SyntheticSensor:
    """Render frames from a simulated scene on the fly (ground truth, no noise).

    Wrap in :class:`NoisySensor` for perturbed streams.
    """

    def __init__(self, scene, spec, intrinsics, frame_count: int | None = None):
        from .simulator import Renderer

        self.scene = scene
        self.spec = spec
        self.renderer = Renderer(scene, intrinsics)
        self.frame_count = spec.frame_count if frame_count is None else frame_count
        self.cursor = 0

    @property
    def intrinsics(self):
        return self.renderer.k

    def __len__(self):
        return self.frame_count

    def __iter__(self):
        return self

    def __next__(self) -> SensorFrame:
        from .simulator import camera_pose_at

        if self.cursor >= self.frame_count:
            raise EndOfSequence("synthetic sequence exhausted")
        i = self.cursor
        self.cursor += 1
        t = i / self.spec.fps
        gt = self.renderer.render(camera_pose_at(self.spec, t), t)
        return SensorFrame(t, gt.keypoints, gt.depth, gt.masks, index=i)


def frame_scale(pred: np.ndarray, gt: np.ndarray) -> float:
    """Median of pred/gt over jointly valid pixels (the per-frame true scale)."""
    valid = (pred > 0) & (gt > 0)
    if not valid.any():
        return float("nan")
    return float(np.median(pred[valid].astype(np.float64) / gt[valid]))
