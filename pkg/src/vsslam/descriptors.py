"""Packed 256-bit binary descriptors (32 bytes per row)."""

from __future__ import annotations

import numpy as np

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamming distance between packed descriptors, broadcasting over leading axes."""
    return _POPCOUNT[np.bitwise_xor(a, b)].sum(axis=-1, dtype=np.int32)


def pairwise_hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs distance matrix of shape ``(len(a), len(b))``."""
    ba = np.unpackbits(np.asarray(a, np.uint8).reshape(-1, 32), axis=1).astype(np.float32)
    bb = np.unpackbits(np.asarray(b, np.uint8).reshape(-1, 32), axis=1).astype(np.float32)
    return np.rint(ba @ (1.0 - bb).T + (1.0 - ba) @ bb.T).astype(np.int32)
