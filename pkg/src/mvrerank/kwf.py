"""K-nearest weighted fusion: multi-view features from gallery neighborhoods."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dataset import FeatureMatrix, ItemMeta
from .errors import ConfigError

WEIGHTING_KINDS = ("uniform", "inverse_distance_power", "exponential_decay")


@dataclass(frozen=True)
class WeightingStrategy:
    """How neighbor features are weighted during aggregation.

    `p` only applies to inverse_distance_power; larger p concentrates weight
    on the closest neighbors.
    """

    kind: str = "inverse_distance_power"
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in WEIGHTING_KINDS:
            raise ConfigError(f"unknown weighting kind {self.kind!r}")
        if not self.p > 0:
            raise ConfigError(f"weighting power p must be > 0, got {self.p}")


@dataclass(frozen=True)
class KwfParams:
    """Stage-2 re-ranking hyperparameters."""

    k: int = 6
    m: int = 100
    strategy: WeightingStrategy = field(default_factory=WeightingStrategy)
    alpha: float = 1.0
    epsilon: float = 1e-12
    include_self: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass
class FusedFeature:
    """Weighted aggregate of neighbor features.

    Empty `source_rows` marks the identity fallback, where no admissible
    neighbor existed and the anchor's own feature is passed through.
    """

    values: np.ndarray
    source_rows: np.ndarray


def compute_weights(
    distances, strategy: WeightingStrategy, epsilon: float = 1e-12
) -> np.ndarray:
    """Normalized non-negative weights for a neighbor distance list."""
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise ValueError("distances must be a non-empty 1-D sequence")
    if not np.isfinite(d).all():
        raise ValueError("distances must be finite")
    if strategy.kind == "uniform":
        return np.full(d.size, 1.0 / d.size)
    if strategy.kind == "inverse_distance_power":
        guarded = np.maximum(d, epsilon)
        w = guarded ** (-strategy.p)
    else:  # exponential_decay
        # Shift by the minimum before exponentiating; the normalized weights
        # are unchanged and large distance scales cannot underflow to 0/0.
        w = np.exp(-(d - d.min()))
    return w / w.sum()


def fuse(neighbors: np.ndarray, weights: np.ndarray, source_rows=None) -> FusedFeature:
    """Weighted sum of neighbor feature vectors."""
    neighbors = np.asarray(neighbors)
    weights = np.asarray(weights, dtype=np.float64)
    if neighbors.ndim != 2 or neighbors.shape[0] == 0:
        raise ValueError("neighbors must be a non-empty (k, dim) array")
    if weights.shape != (neighbors.shape[0],):
        raise ValueError(
            f"got {weights.shape[0]} weights for {neighbors.shape[0]} neighbors"
        )
    values = (weights @ neighbors).astype(np.float32)
    if source_rows is None:
        source_rows = np.arange(neighbors.shape[0], dtype=np.int64)
    return FusedFeature(values, np.asarray(source_rows, dtype=np.int64))


def blend(single: np.ndarray, multi, alpha: float) -> np.ndarray:
    """(1 - alpha) * single + alpha * multi; endpoints pass inputs through."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    multi_values = multi.values if isinstance(multi, FusedFeature) else np.asarray(multi)
    single = np.asarray(single)
    if single.shape != multi_values.shape:
        raise ValueError(f"dimension mismatch: {single.shape} vs {multi_values.shape}")
    if alpha == 0.0:
        return single
    if alpha == 1.0:
        return multi_values
    return (1.0 - alpha) * single + alpha * multi_values


def _camera_mask(camera_ids: np.ndarray, query_cam: int) -> np.ndarray | None:
    if query_cam == -1:
        return None
    mask = camera_ids == query_cam
    return mask if mask.any() else None


def _fused_from_hits(
    gallery_values: np.ndarray,
    anchor_row: int,
    rows: np.ndarray,
    dists: np.ndarray,
    params: KwfParams,
) -> FusedFeature:
    if rows.size == 0:
        return FusedFeature(gallery_values[anchor_row].copy(), np.empty(0, dtype=np.int64))
    weights = compute_weights(dists, params.strategy, params.epsilon)
    return fuse(gallery_values[rows], weights, source_rows=rows)


def multi_view_feature(
    anchor_row: int,
    query_cam: int,
    index,
    meta: list[ItemMeta],
    params: KwfParams,
) -> FusedFeature:
    """Aggregate the anchor's admissible nearest neighbors into one feature.

    Neighbors sharing the query camera are excluded, as is the anchor itself
    unless `params.include_self`. A shorter candidate pool uses all available
    neighbors with renormalized weights; an empty pool falls back to the
    anchor's own feature.
    """
    gallery = index.gallery
    if not 0 <= anchor_row < gallery.rows:
        raise ValueError(f"anchor_row {anchor_row} out of range [0, {gallery.rows})")
    camera_ids = np.array([m.camera_id for m in meta], dtype=np.int64)
    banned = _camera_mask(camera_ids, query_cam)
    skip = None if params.include_self else anchor_row
    rows, dists = index.knn_arrays(
        gallery.values[anchor_row], params.k, banned_mask=banned, skip_row=skip
    )
    return _fused_from_hits(gallery.values, anchor_row, rows, dists, params)


class MultiViewFuser:
    """Computes and memoizes fused features keyed by (anchor_row, query_cam).

    The cache is shared across queries: a fused feature depends only on the
    anchor and the query camera, so repeated anchors in different ranked
    lists reuse the same result. Concurrent insertions of the same key are
    benign because entries are value-identical.
    """

    def __init__(
        self,
        index,
        camera_ids: np.ndarray,
        params: KwfParams,
        probe: Optional[Callable[[], None]] = None,
    ):
        self.index = index
        self.camera_ids = np.asarray(camera_ids, dtype=np.int64)
        self.params = params
        self.cache: dict[tuple[int, int], FusedFeature] = {}
        self.probe = probe
        self._masks: dict[int, np.ndarray | None] = {}
        self.computed = 0

    def _mask_for(self, query_cam: int) -> np.ndarray | None:
        if query_cam not in self._masks:
            self._masks[query_cam] = _camera_mask(self.camera_ids, query_cam)
        return self._masks[query_cam]

    def get(self, anchor_row: int, query_cam: int) -> FusedFeature:
        return self.get_batch(np.array([anchor_row]), query_cam)[0]

    def get_batch(self, anchor_rows: np.ndarray, query_cam: int) -> list[FusedFeature]:
        anchor_rows = np.asarray(anchor_rows, dtype=np.int64)
        missing = [
            int(a) for a in anchor_rows if (int(a), query_cam) not in self.cache
        ]
        if missing:
            uniq = np.unique(np.array(missing, dtype=np.int64))
            banned = self._mask_for(query_cam)
            skip = None if self.params.include_self else uniq
            gallery_values = self.index.gallery.values
            results = self.index.knn_batch(
                gallery_values[uniq], self.params.k, banned_mask=banned, skip_rows=skip
            )
            for anchor, (rows, dists) in zip(uniq, results):
                fused = _fused_from_hits(
                    gallery_values, int(anchor), rows, dists, self.params
                )
                self.cache[(int(anchor), query_cam)] = fused
            self.computed += len(uniq)
            if self.probe is not None:
                self.probe()
        return [self.cache[(int(a), query_cam)] for a in anchor_rows]
