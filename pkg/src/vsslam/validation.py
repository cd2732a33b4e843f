"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .dataset_io import KEYPOINT_DTYPE


def check_depth_raster(depth, shape=None) -> np.ndarray:
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise ValueError(f"depth raster must be 2-D, got shape {depth.shape}")
    if shape is not None and depth.shape != tuple(shape):
        raise ValueError(f"depth raster shape {depth.shape} != expected {tuple(shape)}")
    if not np.issubdtype(depth.dtype, np.floating):
        raise ValueError("depth raster must hold floats")
    return depth


def check_keypoints(records, k=None) -> np.ndarray:
    records = np.asarray(records)
    if records.dtype != KEYPOINT_DTYPE:
        raise ValueError("keypoints must use KEYPOINT_DTYPE")
    if k is not None and len(records):
        u, v = records["u"], records["v"]
        if u.min() < 0 or v.min() < 0 or u.max() >= k.width or v.max() >= k.height:
            raise ValueError("keypoint outside image bounds")
    return records


def check_points(points, name="points", min_count=0) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {points.shape}")
    if len(points) < min_count:
        raise ValueError(f"{name} needs at least {min_count} rows")
    if not np.all(np.isfinite(points)):
        raise ValueError(f"{name} contains non-finite values")
    return points


def check_same_length(*arrays):
    lengths = {len(a) for a in arrays}
    if len(lengths) > 1:
        raise ValueError(f"inputs differ in length: {sorted(lengths)}")


def check_depth_sequence(seq, name="depth sequence") -> list:
    seq = [check_depth_raster(d) for d in seq]
    if not seq:
        raise ValueError(f"{name} is empty")
    shapes = {d.shape for d in seq}
    if len(shapes) > 1:
        raise ValueError(f"{name} mixes raster shapes {sorted(shapes)}")
    return seq
