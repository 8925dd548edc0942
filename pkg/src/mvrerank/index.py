"""Top-k gallery retrieval: exact flat scan, IVF coarse quantization, LSH codes."""

from __future__ import annotations

import json
import math
import struct
from typing import Callable, NamedTuple, Optional

import numpy as np

from .dataset import FeatureMatrix, ItemMeta
from .errors import InputDataError

_INDEX_MAGIC = b"MVRIDX1"
_BACKEND_TAGS = {"flat": 0, "ivf_flat": 1, "lsh": 2}
_TAG_BACKENDS = {v: k for k, v in _BACKEND_TAGS.items()}

ExcludePredicate = Callable[[int, ItemMeta], bool]


class NeighborHit(NamedTuple):
    row: int
    distance: float


def select_topk(dists: np.ndarray, k: int, rows: np.ndarray | None = None):
    """Indices of the k smallest distances, ordered by (distance, row).

    `np.inf` entries mark excluded candidates and are never selected; fewer
    than k results are returned when fewer finite candidates exist. When
    `rows` is given it maps positions to global row ids and must be
    ascending so that ties break toward the lowest row id.
    """
    n = dists.shape[0]
    if k <= 0 or n == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, np.empty(0, dtype=dists.dtype)
    if k < n:
        part = np.argpartition(dists, k - 1)[:k]
        boundary = dists[part].max()
        if np.isinf(boundary):
            sel = np.flatnonzero(np.isfinite(dists))
        else:
            below = np.flatnonzero(dists < boundary)
            if below.size == k:
                sel = below
            else:
                at = np.flatnonzero(dists == boundary)
                sel = np.concatenate([below, at[: k - below.size]])
    else:
        sel = np.flatnonzero(np.isfinite(dists))
    d = dists[sel]
    order = np.lexsort((sel, d))
    sel = sel[order]
    out_rows = sel if rows is None else rows[sel]
    return out_rows.astype(np.int64, copy=False), dists[sel]


def _full_order(dists: np.ndarray):
    """All rows ordered by (distance, row)."""
    order = np.lexsort((np.arange(dists.shape[0]), dists))
    return order.astype(np.int64), dists[order]


def _check_query(query: np.ndarray, dim: int) -> np.ndarray:
    query = np.asarray(query, dtype=np.float32)
    if query.ndim != 1 or query.shape[0] != dim:
        raise ValueError(f"query has shape {query.shape}, index dim is {dim}")
    return query


def _predicate_mask(
    n: int, exclude: Optional[ExcludePredicate], meta: Optional[list[ItemMeta]]
) -> np.ndarray | None:
    if exclude is None:
        return None
    if meta is None:
        raise ValueError("an exclude predicate requires gallery meta")
    if len(meta) != n:
        raise ValueError(f"meta has {len(meta)} items, gallery has {n} rows")
    return np.fromiter((exclude(i, meta[i]) for i in range(n)), dtype=bool, count=n)


class _BaseIndex:
    """Shared knn plumbing over backend-specific candidate scoring."""

    backend: str
    gallery: FeatureMatrix

    @property
    def rows(self) -> int:
        return self.gallery.rows

    @property
    def dim(self) -> int:
        return self.gallery.dim

    def knn(
        self,
        query: np.ndarray,
        k: int,
        exclude: Optional[ExcludePredicate] = None,
        meta: Optional[list[ItemMeta]] = None,
    ) -> list[NeighborHit]:
        """Up to k nearest gallery rows not matching `exclude`, by (distance, row)."""
        query = _check_query(query, self.dim)
        banned = _predicate_mask(self.rows, exclude, meta)
        rows, dists = self.knn_arrays(query, k, banned_mask=banned)
        return [NeighborHit(int(r), float(d)) for r, d in zip(rows, dists)]

    def knn_arrays(
        self,
        query: np.ndarray,
        k: int,
        banned_mask: np.ndarray | None = None,
        skip_row: int | None = None,
    ):
        raise NotImplementedError

    def search_all(self, query: np.ndarray):
        """Every gallery row in this backend's ranked order (full permutation)."""
        raise NotImplementedError

    def knn_batch(
        self,
        queries: np.ndarray,
        k: int,
        banned_mask: np.ndarray | None = None,
        skip_rows: np.ndarray | None = None,
    ):
        """Per-query knn over a (B, dim) block; default loops over knn_arrays."""
        out = []
        for b in range(queries.shape[0]):
            skip = None if skip_rows is None else int(skip_rows[b])
            out.append(self.knn_arrays(queries[b], k, banned_mask=banned_mask, skip_row=skip))
        return out


def _mask_distances(dists, banned_mask, skip_row):
    n_banned = 0
    if banned_mask is not None:
        dists[banned_mask] = np.inf
        n_banned = int(banned_mask.sum())
    if skip_row is not None and (banned_mask is None or not banned_mask[skip_row]):
        dists[skip_row] = np.inf
        n_banned += 1
    return n_banned


class FlatIndex(_BaseIndex):
    """Exact exhaustive search; matches the full-sort oracle including ties."""

    backend = "flat"

    def __init__(self, gallery: FeatureMatrix):
        self.gallery = gallery

    def _all_distances(self, query: np.ndarray) -> np.ndarray:
        # Subtract in float64 so sub-ulp similarity gaps survive; the batched
        # path and the IVF backend do the same.
        d = 1.0 - (self.gallery.values @ query).astype(np.float64)
        np.clip(d, 0.0, 2.0, out=d)
        return d

    def knn_arrays(self, query, k, banned_mask=None, skip_row=None):
        dists = self._all_distances(query)
        n_banned = _mask_distances(dists, banned_mask, skip_row)
        return select_topk(dists, min(k, self.rows - n_banned))

    def search_all(self, query):
        return _full_order(self._all_distances(_check_query(query, self.dim)))

    def knn_batch(self, queries, k, banned_mask=None, skip_rows=None):
        queries = np.ascontiguousarray(queries, dtype=np.float32)
        sims = self.gallery.values @ queries.T  # (N, B): fastest gemm layout
        dists = np.ascontiguousarray(sims.T, dtype=np.float64)
        np.subtract(1.0, dists, out=dists)
        np.clip(dists, 0.0, 2.0, out=dists)
        if banned_mask is not None:
            dists[:, banned_mask] = np.inf
        pool = self.rows - (int(banned_mask.sum()) if banned_mask is not None else 0)
        out = []
        for b in range(queries.shape[0]):
            row_d = dists[b]
            k_eff = pool
            if skip_rows is not None:
                r = int(skip_rows[b])
                if np.isfinite(row_d[r]):
                    row_d[r] = np.inf
                    k_eff -= 1
            out.append(select_topk(row_d, min(k, k_eff)))
        return out


def _kmeans_cosine(x: np.ndarray, nlist: int, seed: int, iters: int = 20):
    """Spherical k-means with k-means++ seeding; returns (centroids, assignments)."""
    n, dim = x.shape
    rng = np.random.default_rng(seed)
    cents = np.empty((nlist, dim), dtype=np.float64)
    cents[0] = x[int(rng.integers(n))]
    closest = np.clip(1.0 - x @ cents[0], 0.0, 2.0)
    for i in range(1, nlist):
        weights = closest * closest
        total = weights.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=weights / total))
        else:
            idx = int(rng.integers(n))
        cents[i] = x[idx]
        d = np.clip(1.0 - x @ cents[i], 0.0, 2.0)
        np.minimum(closest, d, out=closest)
    assign = np.argmax(x @ cents.T, axis=1)
    for _ in range(iters):
        sums = np.zeros((nlist, dim), dtype=np.float64)
        np.add.at(sums, assign, x)
        norms = np.linalg.norm(sums, axis=1)
        nonzero = norms > 0.0
        cents[nonzero] = sums[nonzero] / norms[nonzero, None]
        assign = np.argmax(x @ cents.T, axis=1)
    return cents.astype(np.float32), assign.astype(np.int64)


class IvfFlatIndex(_BaseIndex):
    """Inverted-file index over a spherical k-means coarse quantizer."""

    backend = "ivf_flat"

    def __init__(
        self,
        gallery: FeatureMatrix,
        nlist: int,
        seed: int,
        nprobe: int = 8,
        _state=None,
    ):
        if not 1 <= nlist <= gallery.rows:
            raise ValueError(f"nlist must be in [1, {gallery.rows}], got {nlist}")
        self.gallery = gallery
        self.nlist = nlist
        self.seed = seed
        self.nprobe = min(max(1, nprobe), nlist)
        if _state is None:
            self.centroids, self.assignments = _kmeans_cosine(gallery.values, nlist, seed)
        else:
            self.centroids, self.assignments = _state
        self.lists = [
            np.flatnonzero(self.assignments == c).astype(np.int64) for c in range(nlist)
        ]
        self._flat = FlatIndex(gallery)

    def _centroid_distances(self, query: np.ndarray) -> np.ndarray:
        return np.clip(1.0 - (self.centroids @ query).astype(np.float64), 0.0, 2.0)

    def _candidates(self, query: np.ndarray):
        cdist = self._centroid_distances(query)
        probes, _ = select_topk(cdist, self.nprobe)
        cand = np.sort(np.concatenate([self.lists[int(c)] for c in probes]))
        return cand, cdist

    def knn_arrays(self, query, k, banned_mask=None, skip_row=None):
        if self.nprobe >= self.nlist:
            return self._flat.knn_arrays(query, k, banned_mask=banned_mask, skip_row=skip_row)
        cand, _ = self._candidates(query)
        if cand.size == 0:
            return np.empty(0, dtype=np.int64), np.empty(0)
        d = 1.0 - (self.gallery.values[cand] @ query).astype(np.float64)
        np.clip(d, 0.0, 2.0, out=d)
        pool = cand.size
        if banned_mask is not None:
            sub = banned_mask[cand]
            d[sub] = np.inf
            pool -= int(sub.sum())
        if skip_row is not None:
            pos = np.searchsorted(cand, skip_row)
            if pos < cand.size and cand[pos] == skip_row and np.isfinite(d[pos]):
                d[pos] = np.inf
                pool -= 1
        return select_topk(d, min(k, pool), rows=cand)

    def search_all(self, query):
        query = _check_query(query, self.dim)
        if self.nprobe >= self.nlist:
            return self._flat.search_all(query)
        cand, cdist = self._candidates(query)
        d = 1.0 - (self.gallery.values[cand] @ query).astype(np.float64)
        np.clip(d, 0.0, 2.0, out=d)
        probed_rows, probed_d = select_topk(d, cand.size, rows=cand)
        unprobed = np.ones(self.rows, dtype=bool)
        unprobed[cand] = False
        rest = np.flatnonzero(unprobed)
        # Unprobed rows are ranked by their list's centroid distance and padded
        # with the maximum cosine distance so the list stays a full permutation.
        rest_key = cdist[self.assignments[rest]]
        order = np.lexsort((rest, rest_key))
        rest = rest[order]
        rows = np.concatenate([probed_rows, rest])
        dists = np.concatenate([probed_d, np.full(rest.shape[0], 2.0)])
        return rows.astype(np.int64), dists


class LshIndex(_BaseIndex):
    """Random-hyperplane sign codes ranked by Hamming distance."""

    backend = "lsh"

    def __init__(self, gallery: FeatureMatrix, bits: int, seed: int, _state=None):
        if bits < 8 or bits % 8 != 0:
            raise ValueError(f"bits must be >= 8 and a multiple of 8, got {bits}")
        self.gallery = gallery
        self.bits = bits
        self.seed = seed
        if _state is None:
            rng = np.random.default_rng(seed)
            planes = rng.standard_normal((bits, gallery.dim))
            planes /= np.linalg.norm(planes, axis=1, keepdims=True)
            self.planes = planes.astype(np.float32)
            self.codes = self.encode(gallery.values)
        else:
            self.planes, self.codes = _state

    def encode(self, vecs: np.ndarray) -> np.ndarray:
        signs = (vecs @ self.planes.T) >= 0.0
        return np.packbits(signs, axis=1)

    def _hamming(self, query: np.ndarray) -> np.ndarray:
        qcode = self.encode(query[None, :])[0]
        counts = np.bitwise_count(self.codes ^ qcode)
        return counts.sum(axis=1, dtype=np.int64).astype(np.float64)

    def knn_arrays(self, query, k, banned_mask=None, skip_row=None):
        dists = self._hamming(query)
        n_banned = _mask_distances(dists, banned_mask, skip_row)
        return select_topk(dists, min(k, self.rows - n_banned))

    def search_all(self, query):
        return _full_order(self._hamming(_check_query(query, self.dim)))

    def knn_batch(self, queries, k, banned_mask=None, skip_rows=None):
        qcodes = self.encode(np.ascontiguousarray(queries, dtype=np.float32))
        pool = self.rows - (int(banned_mask.sum()) if banned_mask is not None else 0)
        out = []
        for b in range(queries.shape[0]):
            dists = np.bitwise_count(self.codes ^ qcodes[b]).sum(axis=1, dtype=np.int64)
            dists = dists.astype(np.float64)
            k_eff = pool
            if banned_mask is not None:
                dists[banned_mask] = np.inf
            if skip_rows is not None:
                r = int(skip_rows[b])
                if np.isfinite(dists[r]):
                    dists[r] = np.inf
                    k_eff -= 1
            out.append(select_topk(dists, min(k, k_eff)))
        return out


NeighborIndex = FlatIndex | IvfFlatIndex | LshIndex


def build_flat(gallery: FeatureMatrix | np.ndarray) -> FlatIndex:
    return FlatIndex(_as_matrix(gallery))


def default_nlist(rows: int) -> int:
    return min(max(1, round(math.sqrt(rows))), rows)


def build_ivf_flat(
    gallery: FeatureMatrix | np.ndarray,
    nlist: int | None = None,
    seed: int = 0,
    nprobe: int = 8,
) -> IvfFlatIndex:
    gallery = _as_matrix(gallery)
    if nlist is None:
        nlist = default_nlist(gallery.rows)
    return IvfFlatIndex(gallery, nlist, seed, nprobe=nprobe)


def build_lsh(
    gallery: FeatureMatrix | np.ndarray, bits: int = 512, seed: int = 0
) -> LshIndex:
    return LshIndex(_as_matrix(gallery), bits, seed)


def build_index(
    gallery: FeatureMatrix | np.ndarray,
    backend: str,
    *,
    nlist: int | None = None,
    nprobe: int = 8,
    bits: int = 512,
    seed: int = 0,
) -> NeighborIndex:
    if backend == "flat":
        return build_flat(gallery)
    if backend == "ivf_flat":
        return build_ivf_flat(gallery, nlist=nlist, seed=seed, nprobe=nprobe)
    if backend == "lsh":
        return build_lsh(gallery, bits=bits, seed=seed)
    raise ValueError(f"unknown index backend {backend!r}")


def _as_matrix(gallery) -> FeatureMatrix:
    if isinstance(gallery, FeatureMatrix):
        return gallery
    return FeatureMatrix(np.asarray(gallery))


def knn(
    index: NeighborIndex,
    query: np.ndarray,
    k: int,
    exclude: Optional[ExcludePredicate] = None,
    meta: Optional[list[ItemMeta]] = None,
) -> list[NeighborHit]:
    return index.knn(query, k, exclude=exclude, meta=meta)


def save_index(index: NeighborIndex, path) -> None:
    """Persist an index as a versioned binary blob (magic MVRIDX1)."""
    params: dict = {"rows": index.rows, "dim": index.dim}
    arrays: list[np.ndarray] = []
    if index.backend == "ivf_flat":
        params.update(nlist=index.nlist, nprobe=index.nprobe, seed=index.seed)
        arrays = [index.centroids, index.assignments]
    elif index.backend == "lsh":
        params.update(bits=index.bits, seed=index.seed)
        arrays = [index.planes, index.codes]
    header = json.dumps(params, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_INDEX_MAGIC)
        f.write(struct.pack("<B", _BACKEND_TAGS[index.backend]))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for arr in arrays:
            np.lib.format.write_array(f, np.ascontiguousarray(arr), version=(1, 0))


def load_index(path, gallery: FeatureMatrix) -> NeighborIndex:
    """Load a persisted index, rejecting blobs built over a different gallery."""
    with open(path, "rb") as f:
        magic = f.read(len(_INDEX_MAGIC))
        if magic != _INDEX_MAGIC:
            raise InputDataError(f"{path}: not an index blob (magic {magic!r})")
        (tag,) = struct.unpack("<B", f.read(1))
        if tag not in _TAG_BACKENDS:
            raise InputDataError(f"{path}: unknown backend tag {tag}")
        (hlen,) = struct.unpack("<I", f.read(4))
        params = json.loads(f.read(hlen).decode("utf-8"))
        if params["rows"] != gallery.rows or params["dim"] != gallery.dim:
            raise InputDataError(
                f"{path}: index was built over {params['rows']}x{params['dim']}, "
                f"gallery is {gallery.rows}x{gallery.dim}"
            )
        backend = _TAG_BACKENDS[tag]
        if backend == "flat":
            return FlatIndex(gallery)
        if backend == "ivf_flat":
            centroids = np.lib.format.read_array(f)
            assignments = np.lib.format.read_array(f)
            return IvfFlatIndex(
                gallery,
                params["nlist"],
                params["seed"],
                nprobe=params["nprobe"],
                _state=(centroids, assignments),
            )
        planes = np.lib.format.read_array(f)
        codes = np.lib.format.read_array(f)
        return LshIndex(gallery, params["bits"], params["seed"], _state=(planes, codes))
