"""Array-in, array-out bindings for the mvrerank engine.

Exposes exactly two entry points for callers that already hold features as
in-memory arrays: `py_rerank` (two-stage re-ranking to a ranked index
matrix) and `py_evaluate` (CMC/mAP over ranked index matrices). Caller
arrays are validated and copied into engine-side structures; they are never
mutated. Engine failures propagate as the engine's own exceptions with
their diagnostic text.
"""

from __future__ import annotations

import numpy as np

import mvrerank
from mvrerank import Dataset, FeatureMatrix, ItemMeta, KwfParams, WeightingStrategy
from mvrerank.errors import ConfigError
from mvrerank.metrics import MetricsAccumulator
from mvrerank.pipeline import run_all

__version__ = mvrerank.__version__

__all__ = ["py_rerank", "py_evaluate", "__version__"]

_WEIGHTING_NAMES = {
    "uniform": "uniform",
    "idp": "inverse_distance_power",
    "expdecay": "exponential_decay",
    "inverse_distance_power": "inverse_distance_power",
    "exponential_decay": "exponential_decay",
}
_INDEX_NAMES = {"flat": "flat", "ivfflat": "ivf_flat", "ivf_flat": "ivf_flat", "lsh": "lsh"}
_ALLOWED_OPTIONS = {
    "k", "m", "weighting", "p", "alpha", "epsilon", "include_self",
    "index", "nlist", "nprobe", "bits", "seed", "threads",
}


def _as_cams(cams, expected: int, label: str) -> np.ndarray:
    arr = np.asarray(cams, dtype=np.int64)
    if arr.shape != (expected,):
        raise ValueError(f"{label} has shape {arr.shape}, expected ({expected},)")
    return arr


def _bound_dataset(query_features, gallery_features, gallery_cams, query_cams) -> Dataset:
    qf = np.asarray(query_features)
    gf = np.asarray(gallery_features)
    if qf.ndim != 2 or gf.ndim != 2:
        raise ValueError(f"feature arrays must be 2-D, got {qf.shape} and {gf.shape}")
    if qf.shape[1] != gf.shape[1]:
        raise ValueError(f"dimension mismatch: query {qf.shape[1]} vs gallery {gf.shape[1]}")
    q_cams = _as_cams(query_cams, qf.shape[0], "query_cams")
    g_cams = _as_cams(gallery_cams, gf.shape[0], "gallery_cams")
    # person ids are irrelevant to re-ranking; synthesize placeholders
    query_meta = [ItemMeta(f"q{i}", i, int(q_cams[i])) for i in range(qf.shape[0])]
    gallery_meta = [ItemMeta(f"g{i}", -1, int(g_cams[i])) for i in range(gf.shape[0])]
    return mvrerank.validate(
        Dataset(
            query_features=FeatureMatrix(qf),
            query_meta=query_meta,
            gallery_features=FeatureMatrix(gf),
            gallery_meta=gallery_meta,
        )
    )


def _parse_options(params: dict | None):
    params = dict(params or {})
    unknown = set(params) - _ALLOWED_OPTIONS
    if unknown:
        raise ConfigError(f"invalid option(s): {sorted(unknown)}")
    weighting = params.get("weighting", "idp")
    if weighting not in _WEIGHTING_NAMES:
        raise ConfigError(f"invalid weighting {weighting!r}")
    index = params.get("index", "flat")
    if index not in _INDEX_NAMES:
        raise ConfigError(f"invalid index backend {index!r}")
    kwf = KwfParams(
        k=int(params.get("k", 6)),
        m=int(params.get("m", 100)),
        strategy=WeightingStrategy(_WEIGHTING_NAMES[weighting], float(params.get("p", 2.0))),
        alpha=float(params.get("alpha", 1.0)),
        epsilon=float(params.get("epsilon", 1e-12)),
        include_self=bool(params.get("include_self", False)),
    )
    engine_opts = dict(
        backend=_INDEX_NAMES[index],
        nlist=params.get("nlist"),
        nprobe=int(params.get("nprobe", 8)),
        bits=int(params.get("bits", 512)),
        seed=int(params.get("seed", 0)),
        threads=int(params.get("threads", 1)),
    )
    return kwf, engine_opts


def py_rerank(
    query_features,
    gallery_features,
    gallery_cams,
    query_cams,
    params: dict | None = None,
) -> np.ndarray:
    """Two-stage re-ranking of every query; returns a (queries, gallery)
    int64 matrix whose rows are stage-2 orderings of gallery row indices.

    `params` accepts the engine's run knobs: k, m, weighting
    (uniform/idp/expdecay), p, alpha, epsilon, include_self, index
    (flat/ivfflat/lsh), nlist, nprobe, bits, seed, threads.
    """
    kwf, opts = _parse_options(params)
    qf = np.asarray(query_features)
    if qf.ndim == 2 and qf.shape[0] == 0:
        gf = np.asarray(gallery_features)
        return np.empty((0, gf.shape[0] if gf.ndim == 2 else 0), dtype=np.int64)
    dataset = _bound_dataset(query_features, gallery_features, gallery_cams, query_cams)
    results = run_all(
        dataset,
        kwf,
        opts["backend"],
        threads=opts["threads"],
        seed=opts["seed"],
        nlist=opts["nlist"],
        nprobe=opts["nprobe"],
        bits=opts["bits"],
    )
    return np.stack([r.stage2.rows for r in results])


def _as_meta(meta, label: str) -> tuple[np.ndarray, np.ndarray]:
    pids, cams = [], []
    for i, item in enumerate(meta):
        if isinstance(item, dict):
            pid, cam = item["person_id"], item["camera_id"]
        else:
            pid, cam = item[0], item[1]
        pids.append(int(pid))
        cams.append(int(cam))
    if not pids:
        raise ValueError(f"{label} is empty")
    return np.array(pids, dtype=np.int64), np.array(cams, dtype=np.int64)


class _MetaOnly:
    """Duck-typed stand-in for the engine dataset in metric aggregation."""

    def __init__(self, q, g):
        self.query_person_ids, self.query_camera_ids = q
        self.gallery_person_ids, self.gallery_camera_ids = g


def py_evaluate(rankings, query_meta, gallery_meta) -> dict:
    """CMC/mAP for ranked index matrices under the cross-camera protocol.

    `rankings` is a (queries, gallery) matrix of gallery row orderings;
    metadata items are (person_id, camera_id) pairs or dicts with those
    keys. Returns a mapping with rank1, rank5, rank10, map, cmc, evaluated,
    and skipped.
    """
    ranks = np.asarray(rankings, dtype=np.int64)
    if ranks.ndim != 2:
        raise ValueError(f"rankings must be 2-D, got shape {ranks.shape}")
    q = _as_meta(query_meta, "query_meta")
    g = _as_meta(gallery_meta, "gallery_meta")
    if ranks.shape[0] != q[0].shape[0]:
        raise ValueError(
            f"rankings cover {ranks.shape[0]} queries, meta has {q[0].shape[0]}"
        )
    if ranks.shape[1] != g[0].shape[0]:
        raise ValueError(
            f"rankings cover {ranks.shape[1]} gallery rows, meta has {g[0].shape[0]}"
        )
    acc = MetricsAccumulator(_MetaOnly(q, g))
    for i in range(ranks.shape[0]):
        acc.add(i, ranks[i])
    report = acc.report()
    return {
        "rank1": report.rank(1),
        "rank5": report.rank(5),
        "rank10": report.rank(10),
        "map": report.map,
        "cmc": [float(v) for v in report.cmc],
        "evaluated": report.evaluated_queries,
        "skipped": report.skipped_queries,
    }
