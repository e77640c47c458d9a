"""Nearest-neighbour search between 2D point sets.

``brute`` is the reference O(n m) scan. ``kdtree`` wraps scipy's cKDTree and
resolves exact distance ties towards the lowest destination index, so both
backends return identical assignments on tie-free inputs and deterministic
ones otherwise.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

BACKENDS = ("kdtree", "brute")
_CHUNK = 1 << 20  # entries of the distance matrix evaluated at once


def distances_to(src: np.ndarray, dst: np.ndarray, idx: np.ndarray) -> np.ndarray:
    d = src - dst[idx]
    return np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])


def nearest_brute(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Index into ``dst`` of the nearest point for each row of ``src`` (lowest index on ties)."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    out = np.empty(len(src), dtype=np.intp)
    step = max(1, _CHUNK // max(len(dst), 1))
    for s in range(0, len(src), step):
        a = src[s:s + step]
        dx = a[:, None, 0] - dst[None, :, 0]
        dy = a[:, None, 1] - dst[None, :, 1]
        out[s:s + step] = np.argmin(dx * dx + dy * dy, axis=1)
    return out


class KDIndex:
    """Reusable k-d tree over a fixed destination set."""

    def __init__(self, dst):
        self.dst = np.ascontiguousarray(dst, dtype=float)
        self.tree = cKDTree(self.dst)

    def query(self, src) -> np.ndarray:
        src = np.asarray(src, dtype=float)
        if len(self.dst) == 1:
            return np.zeros(len(src), dtype=np.intp)
        d, i = self.tree.query(src, k=2)
        idx = i[:, 0].astype(np.intp)
        # cKDTree gives no ordering guarantee among equidistant points.
        maybe_tied = np.flatnonzero(d[:, 1] <= d[:, 0] * (1 + 1e-12) + 1e-300)
        if maybe_tied.size:
            idx[maybe_tied] = nearest_brute(src[maybe_tied], self.dst)
        return idx


def nearest(src, dst, backend: str = "kdtree", index: KDIndex | None = None) -> np.ndarray:
    if backend == "brute":
        return nearest_brute(src, dst)
    if backend != "kdtree":
        raise ValueError(f"unknown nearest-neighbour backend {backend!r}")
    if index is None:
        index = KDIndex(dst)
    return index.query(src)
