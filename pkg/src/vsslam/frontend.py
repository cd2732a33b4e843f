"""Static, metrically scaled feature extraction from virtual-sensor frames.

Pipeline per frame: grid-bucketed feature budgeting, dynamic mask from
instance classes, circular dilation, static filtering and depth
association with backprojection into the camera frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .dataset_io import InstanceMask
from .geometry import CameraIntrinsics, nearest_pixel
from .morphology import dilate
from .sensors import SensorFrame
from .validation import check_depth_raster, check_keypoints

REFERENCE_DIAGONAL = 800.0  # 640x480
REFERENCE_RADIUS = 10


def default_dilation_radius(width: int, height: int) -> int:
    return int(round(REFERENCE_RADIUS * math.hypot(width, height) / REFERENCE_DIAGONAL))


@dataclass
class FrontEndOutput:
    """Scaled 3D features plus the features left without usable depth."""

    points: np.ndarray
    descriptors: np.ndarray
    pixels: np.ndarray
    depths: np.ndarray
    mono_pixels: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    mono_descriptors: np.ndarray = field(default_factory=lambda: np.zeros((0, 32), np.uint8))
    timestamp: float = 0.0

    @property
    def n_scaled(self) -> int:
        return len(self.points)

    @property
    def n_mono(self) -> int:
        return len(self.mono_pixels)

    def __len__(self):
        return self.n_scaled + self.n_mono

    def all_pixels(self) -> np.ndarray:
        return np.concatenate([self.pixels, self.mono_pixels]).reshape(-1, 2)

    def all_descriptors(self) -> np.ndarray:
        return np.concatenate([self.descriptors, self.mono_descriptors]).reshape(-1, 32)


def select_features(candidates: np.ndarray, budget: int, grid_dims: tuple,
                    width: int, height: int) -> np.ndarray:
    """Keep at most ``budget`` keypoints, spread over a ``(gx, gy)`` cell grid.

    Each cell keeps its ``ceil(budget / cells)`` strongest candidates, then the
    survivors are trimmed globally by response. Ties break on ``v``, then ``u``,
    then input order. Survivors keep their input order.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    gx, gy = (int(g) for g in grid_dims)
    if gx < 1 or gy < 1:
        raise ValueError("grid dimensions must be >= 1")
    n = len(candidates)
    if n == 0:
        return candidates[:0]
    u = candidates["u"].astype(np.float64)
    v = candidates["v"].astype(np.float64)
    resp = candidates["response"].astype(np.float64)
    cx = np.clip((u * gx / width).astype(np.intp), 0, gx - 1)
    cy = np.clip((v * gy / height).astype(np.intp), 0, gy - 1)
    cell = cy * gx + cx
    idx = np.arange(n)
    # global ranking, then stable regroup by cell keeps the ranking inside cells
    rank = np.lexsort((idx, u, v, -resp))
    by_cell = rank[np.argsort(cell[rank], kind="stable")]
    sorted_cells = cell[by_cell]
    starts = np.searchsorted(sorted_cells, sorted_cells, side="left")
    position_in_cell = np.arange(n) - starts
    quota = math.ceil(budget / (gx * gy))
    kept = by_cell[position_in_cell < quota]
    pos = np.empty(n, dtype=np.intp)
    pos[rank] = np.arange(n)
    kept = kept[np.argsort(pos[kept])][:budget]
    return candidates[np.sort(kept)]


def build_dynamic_mask(masks: InstanceMask, dynamic_classes) -> np.ndarray:
    """Boolean raster of pixels whose instance class is dynamic."""
    dyn = set(int(c) for c in dynamic_classes)
    ids = [i for i, c in masks.instances if c in dyn]
    if not ids:
        return np.zeros(masks.shape, dtype=bool)
    lut = np.zeros(65536, dtype=bool)
    lut[ids] = True
    return lut[masks.ids]


def filter_static(features: np.ndarray, dilated: np.ndarray) -> np.ndarray:
    """Drop features whose nearest pixel lies on the (dilated) dynamic mask."""
    if len(features) == 0:
        return features
    cu, cv = nearest_pixel(np.stack([features["u"], features["v"]], axis=-1))
    h, w = dilated.shape
    cu = np.clip(cu, 0, w - 1)
    cv = np.clip(cv, 0, h - 1)
    return features[~dilated[cv, cu]]


def associate_depth(features: np.ndarray, depth: np.ndarray, d_min: float, d_max: float,
                    k: CameraIntrinsics, timestamp: float = 0.0) -> FrontEndOutput:
    """Sample depth at each feature's nearest pixel and backproject in-range ones."""
    if not 0 < d_min < d_max:
        raise ValueError("depth range must satisfy 0 < d_min < d_max")
    uv = np.stack([features["u"], features["v"]], axis=-1).astype(np.float64)
    desc = features["descriptor"]
    if len(features) == 0:
        return FrontEndOutput(np.zeros((0, 3)), desc, uv, np.zeros(0), uv, desc, timestamp)
    cu, cv = nearest_pixel(uv)
    h, w = depth.shape
    d = depth[np.clip(cv, 0, h - 1), np.clip(cu, 0, w - 1)].astype(np.float64)
    ok = np.isfinite(d) & (d >= d_min) & (d <= d_max)
    du = d[ok]
    pts = np.stack([(uv[ok, 0] - k.cx) * du / k.fx, (uv[ok, 1] - k.cy) * du / k.fy, du], axis=-1)
    return FrontEndOutput(pts.reshape(-1, 3), desc[ok], uv[ok], du,
                          uv[~ok], desc[~ok], timestamp)


@dataclass
class FrontEndConfig:
    budget: int = 1000
    dilation_radius_px: int | None = None
    d_min: float = 0.3
    d_max: float = 7.5
    grid_x: int = 8
    grid_y: int = 8
    masking: bool = True
    dynamic_classes: tuple = (1,)


def process_frame(frame: SensorFrame, cfg: FrontEndConfig, k: CameraIntrinsics) -> FrontEndOutput:
    feats = select_features(frame.keypoints, cfg.budget, (cfg.grid_x, cfg.grid_y), k.width, k.height)
    if cfg.masking:
        radius = cfg.dilation_radius_px
        if radius is None:
            radius = default_dilation_radius(k.width, k.height)
        dyn = build_dynamic_mask(frame.masks, cfg.dynamic_classes)
        if dyn.any():
            feats = filter_static(feats, dilate(dyn, radius))
    return associate_depth(feats, frame.depth, cfg.d_min, cfg.d_max, k, frame.timestamp)


class FrontEnd(BaseEstimator, TransformerMixin):
    """Turns sensor frames into :class:`FrontEndOutput` feature sets.

    Stateless apart from the camera intrinsics captured by :meth:`fit`.
    """

    def __init__(self, budget=1000, dilation_radius_px=None, d_min=0.3, d_max=7.5,
                 grid_x=8, grid_y=8, masking=True, dynamic_classes=(1,)):
        self.budget = budget
        self.dilation_radius_px = dilation_radius_px
        self.d_min = d_min
        self.d_max = d_max
        self.grid_x = grid_x
        self.grid_y = grid_y
        self.masking = masking
        self.dynamic_classes = dynamic_classes

    def fit(self, X=None, y=None, intrinsics: CameraIntrinsics | None = None):
        if intrinsics is None:
            intrinsics = getattr(X, "intrinsics", None)
        if intrinsics is None:
            raise ValueError("FrontEnd.fit needs camera intrinsics")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not 0 < self.d_min < self.d_max:
            raise ValueError("depth range must satisfy 0 < d_min < d_max")
        if self.grid_x < 1 or self.grid_y < 1:
            raise ValueError("grid dimensions must be >= 1")
        if self.dilation_radius_px is not None and self.dilation_radius_px < 0:
            raise ValueError("dilation radius must be >= 0")
        self.intrinsics_ = intrinsics
        self.config_ = FrontEndConfig(self.budget, self.dilation_radius_px, self.d_min, self.d_max,
                                      self.grid_x, self.grid_y, bool(self.masking),
                                      tuple(self.dynamic_classes))
        return self

    def transform_frame(self, frame: SensorFrame) -> FrontEndOutput:
        if not hasattr(self, "config_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("FrontEnd is not fitted yet")
        k = self.intrinsics_
        check_depth_raster(frame.depth, (k.height, k.width))
        check_keypoints(frame.keypoints, k)
        return process_frame(frame, self.config_, k)

    def transform(self, X):
        if isinstance(X, SensorFrame):
            return self.transform_frame(X)
        return [self.transform_frame(f) for f in X]
