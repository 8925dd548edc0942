"""CMC and mAP under the cross-camera matching protocol."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, ItemMeta
from .pipeline import RankedList, RerankResult


@dataclass
class MetricsReport:
    cmc: np.ndarray
    map: float
    per_query_ap: list[float]
    evaluated_queries: int
    skipped_queries: int
    timing: dict | None = None

    def rank(self, r: int) -> float:
        return float(self.cmc[r - 1]) if 1 <= r <= len(self.cmc) else float(self.cmc[-1])


def _eval_arrays(order, q_pid, q_cam, g_pids, g_cams):
    """(ap, first_match_rank) for one ranked row array, or (None, None)."""
    pids = g_pids[order]
    cams = g_cams[order]
    junk = ((pids == q_pid) & (cams == q_cam)) | (pids == -1)
    pids = pids[~junk]
    cams = cams[~junk]
    good = (pids == q_pid) & (cams != q_cam)
    if not good.any():
        return None, None
    ranks = np.flatnonzero(good) + 1
    ap = float(np.mean(np.arange(1, ranks.size + 1) / ranks))
    return ap, int(ranks[0])


def query_eval(
    ranked: RankedList,
    query_meta: ItemMeta,
    gallery_meta: list[ItemMeta],
):
    """AP and first-match rank for one query after junk removal.

    Junk items (same identity seen by the same camera, plus distractors) are
    removed and positions compacted before scoring. Queries whose remaining
    good set is empty return (None, None) and are excluded from averages.
    """
    g_pids = np.array([m.person_id for m in gallery_meta], dtype=np.int64)
    g_cams = np.array([m.camera_id for m in gallery_meta], dtype=np.int64)
    return _eval_arrays(ranked.rows, query_meta.person_id, query_meta.camera_id, g_pids, g_cams)


class MetricsAccumulator:
    """Streaming CMC/mAP aggregation, one ranked list at a time."""

    def __init__(self, dataset: Dataset, max_rank: int = 20):
        self.q_pids = dataset.query_person_ids
        self.q_cams = dataset.query_camera_ids
        self.g_pids = dataset.gallery_person_ids
        self.g_cams = dataset.gallery_camera_ids
        self.max_rank = max_rank
        self.aps: list[float] = []
        self.first_ranks: list[int] = []
        self.skipped = 0

    def add(self, query_row: int, order: np.ndarray) -> None:
        ap, first = _eval_arrays(
            order,
            self.q_pids[query_row],
            self.q_cams[query_row],
            self.g_pids,
            self.g_cams,
        )
        if ap is None:
            self.skipped += 1
        else:
            self.aps.append(ap)
            self.first_ranks.append(first)

    def report(self, timing: dict | None = None) -> MetricsReport:
        evaluated = len(self.aps)
        if evaluated:
            firsts = np.array(self.first_ranks)
            cmc = np.array(
                [(firsts <= r).mean() for r in range(1, self.max_rank + 1)]
            )
            mean_ap = float(np.mean(self.aps))
        else:
            cmc = np.zeros(self.max_rank)
            mean_ap = 0.0
        return MetricsReport(
            cmc=cmc,
            map=mean_ap,
            per_query_ap=list(self.aps),
            evaluated_queries=evaluated,
            skipped_queries=self.skipped,
            timing=timing,
        )


def evaluate(results, dataset: Dataset, max_rank: int = 20) -> MetricsReport:
    """Aggregate CMC/mAP over per-query ranked lists (stage-2 for reranked
    results)."""
    acc = MetricsAccumulator(dataset, max_rank=max_rank)
    for item in results:
        ranked = item.stage2 if isinstance(item, RerankResult) else item
        acc.add(ranked.query_row, ranked.rows)
    return acc.report()


def report_to_dict(report: MetricsReport) -> dict:
    out = {
        "rank1": report.rank(1),
        "rank5": report.rank(5),
        "rank10": report.rank(10),
        "map": report.map,
        "cmc": [float(v) for v in report.cmc],
        "evaluated": report.evaluated_queries,
        "skipped": report.skipped_queries,
        "timing": report.timing or {},
    }
    return out


def format_table(report: MetricsReport) -> str:
    rows = [
        ("Rank@1", report.rank(1)),
        ("Rank@5", report.rank(5)),
        ("Rank@10", report.rank(10)),
        ("mAP", report.map),
    ]
    lines = ["metric     value", "-----------------"]
    lines += [f"{name:<10s} {value:6.4f}" for name, value in rows]
    lines.append(
        f"queries    {report.evaluated_queries} evaluated, {report.skipped_queries} skipped"
    )
    return "\n".join(lines)
