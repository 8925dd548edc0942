"""Cosine-distance kernels for unit-norm vectors and matrices."""

from __future__ import annotations

import numpy as np

from .dataset import FeatureMatrix
from .errors import MemoryBudgetError

# Tile height for blocked matrix evaluation; keeps the working set small
# for large galleries without ever materializing an N x N intermediate.
DEFAULT_TILE_ROWS = 4096


def _as_array(x) -> np.ndarray:
    return x.values if isinstance(x, FeatureMatrix) else np.asarray(x)


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - dot(u, v) for unit vectors, clamped to [0, 2]."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    d = 1.0 - float(np.dot(u, v))
    return min(max(d, 0.0), 2.0)


def distances_to(gallery: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Cosine distances from one unit query to every gallery row."""
    gallery = _as_array(gallery)
    query = np.asarray(query)
    if gallery.shape[1] != query.shape[0]:
        raise ValueError(f"dimension mismatch: {gallery.shape[1]} vs {query.shape[0]}")
    d = 1.0 - (gallery @ query).astype(np.float64)
    np.clip(d, 0.0, 2.0, out=d)
    return d


def pairwise_distances(
    a,
    b,
    *,
    tile_rows: int = DEFAULT_TILE_ROWS,
    max_bytes: int | None = None,
) -> np.ndarray:
    """Full cosine-distance matrix, entry (i, j) = cosine_distance(a[i], b[j]).

    Evaluated in row tiles of `a`; only one tile-sized block is in flight
    beyond the inputs and the output. When `max_bytes` is set, output
    materialization beyond the budget raises MemoryBudgetError.
    """
    a = _as_array(a)
    b = _as_array(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if tile_rows < 1:
        raise ValueError("tile_rows must be >= 1")
    out_bytes = a.shape[0] * b.shape[0] * np.dtype(np.float32).itemsize
    if max_bytes is not None and out_bytes > max_bytes:
        raise MemoryBudgetError(
            f"distance matrix of {out_bytes} bytes exceeds budget of {max_bytes}"
        )
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float32)
    bt = b.T
    for start in range(0, a.shape[0], tile_rows):
        stop = min(start + tile_rows, a.shape[0])
        block = out[start:stop]
        np.matmul(a[start:stop], bt, out=block)
        np.subtract(1.0, block, out=block)
        np.clip(block, 0.0, 2.0, out=block)
    return out
