"""Binary morphology with a circular (Euclidean disk) structuring element."""

from __future__ import annotations

import cv2
import numpy as np


def disk(radius: int) -> np.ndarray:
    """Boolean disk of offsets with ``dx**2 + dy**2 <= radius**2``."""
    r = int(radius)
    if r < 0:
        raise ValueError("radius must be non-negative")
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (xx * xx + yy * yy) <= r * r


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Set every pixel within Euclidean distance ``radius`` of a set pixel.

    Offsets that leave the image are ignored (border clamp).
    """
    mask = np.asarray(mask, dtype=bool)
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if radius == 0 or not mask.any():
        return mask.copy()
    kernel = disk(radius).astype(np.uint8)
    out = cv2.dilate(mask.view(np.uint8), kernel, borderType=cv2.BORDER_CONSTANT, borderValue=0)
    return out.astype(bool)


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Dual of :func:`dilate`; pixels outside the image count as set."""
    mask = np.asarray(mask, dtype=bool)
    if radius <= 0:
        return mask.copy()
    return ~dilate(~mask, radius)
