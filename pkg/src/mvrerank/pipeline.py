"""Two-stage ranking: full cosine ranking, then top-M multi-view re-ranking."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .index import NeighborIndex, build_index
from .kwf import KwfParams, MultiViewFuser


@dataclass
class RankedList:
    """A permutation of gallery rows with the distances that produced it."""

    query_row: int
    rows: np.ndarray
    distances: np.ndarray


@dataclass
class RerankResult:
    stage1: RankedList
    stage2: RankedList
    fused_count: int
    timing: dict[str, float] = field(default_factory=dict)


def initial_rank(query_row: int, dataset: Dataset, index: NeighborIndex) -> RankedList:
    """Stage 1: order the whole gallery by distance to the query feature."""
    if not 0 <= query_row < dataset.query_features.rows:
        raise ValueError(
            f"query_row {query_row} out of range [0, {dataset.query_features.rows})"
        )
    rows, dists = index.search_all(dataset.query_features.values[query_row])
    return RankedList(query_row, rows, dists)


def _blended_distances(
    query_feature: np.ndarray,
    singles: np.ndarray,
    fused_matrix: np.ndarray,
    alpha: float,
) -> np.ndarray:
    if alpha == 1.0:
        blended = fused_matrix
    else:
        blended = (1.0 - alpha) * singles + alpha * fused_matrix
    # True cosine against possibly non-unit blends: dividing by the norm here
    # is equivalent to re-normalizing the blend and never changes the order.
    norms = np.linalg.norm(blended.astype(np.float64), axis=1)
    norms[norms == 0.0] = 1.0
    d = 1.0 - (blended @ query_feature).astype(np.float64) / norms
    np.clip(d, 0.0, 2.0, out=d)
    return d


def rerank(
    query_row: int,
    stage1: RankedList,
    dataset: Dataset,
    index: NeighborIndex,
    params: KwfParams,
    fuser: MultiViewFuser | None = None,
) -> RerankResult:
    """Stage 2: re-order the top-M entries by blended multi-view distance.

    Entries beyond M keep their stage-1 positions and distances bitwise. At
    alpha = 0 the blend equals the single-view feature, so the stage-1 head
    is passed through unchanged, distances included.
    """
    t0 = time.perf_counter()
    n = stage1.rows.shape[0]
    head_n = min(params.m, n)
    if params.alpha == 0.0 or head_n <= 1:
        stage2 = RankedList(query_row, stage1.rows.copy(), stage1.distances.copy())
        return RerankResult(
            stage1, stage2, 0, {"stage2_s": time.perf_counter() - t0}
        )
    if fuser is None:
        fuser = MultiViewFuser(index, dataset.gallery_camera_ids, params)
    query_cam = int(dataset.query_camera_ids[query_row])
    head_rows = stage1.rows[:head_n]
    fused_list = fuser.get_batch(head_rows, query_cam)
    fused_matrix = np.stack([f.values for f in fused_list])
    singles = dataset.gallery_features.values[head_rows]
    query_feature = dataset.query_features.values[query_row]
    new_d = _blended_distances(query_feature, singles, fused_matrix, params.alpha)
    order = np.argsort(new_d, kind="stable")
    stage2 = RankedList(
        query_row,
        np.concatenate([head_rows[order], stage1.rows[head_n:]]),
        np.concatenate([new_d[order], stage1.distances[head_n:]]),
    )
    fused_count = sum(1 for f in fused_list if f.source_rows.size > 0)
    return RerankResult(
        stage1, stage2, fused_count, {"stage2_s": time.perf_counter() - t0}
    )


def run_all(
    dataset: Dataset,
    params: KwfParams,
    backend: str = "flat",
    *,
    index: NeighborIndex | None = None,
    threads: int = 1,
    seed: int = 0,
    nlist: int | None = None,
    nprobe: int = 8,
    bits: int = 512,
) -> list[RerankResult]:
    """Rank and re-rank every query; results are in query order and
    deterministic given (dataset, params, seed)."""
    if index is None:
        index = build_index(
            dataset.gallery_features,
            backend,
            nlist=nlist,
            nprobe=nprobe,
            bits=bits,
            seed=seed,
        )
    fuser = MultiViewFuser(index, dataset.gallery_camera_ids, params)

    def one(query_row: int) -> RerankResult:
        t0 = time.perf_counter()
        stage1 = initial_rank(query_row, dataset, index)
        t1 = time.perf_counter()
        result = rerank(query_row, stage1, dataset, index, params, fuser=fuser)
        result.timing["stage1_s"] = t1 - t0
        return result

    query_rows = range(dataset.query_features.rows)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, query_rows))
    return [one(q) for q in query_rows]
