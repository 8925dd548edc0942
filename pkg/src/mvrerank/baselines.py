"""Query-expansion baselines: average QE and similarity-weighted QE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ConfigError
from .pipeline import RankedList


@dataclass(frozen=True)
class QeParams:
    n_expand: int = 10
    qe_alpha: float = 3.0

    def __post_init__(self):
        if self.n_expand < 1:
            raise ConfigError(f"n_expand must be >= 1, got {self.n_expand}")
        if self.qe_alpha < 0:
            raise ConfigError(f"qe_alpha must be >= 0, got {self.qe_alpha}")


def _expand_and_rank(
    query_row: int, dataset: Dataset, top_rows: np.ndarray, weights: np.ndarray
) -> RankedList:
    gallery = dataset.gallery_features.values
    query = dataset.query_features.values[query_row].astype(np.float64)
    expanded = (query + weights @ gallery[top_rows].astype(np.float64)) / (
        1.0 + weights.sum()
    )
    norm = np.linalg.norm(expanded)
    if norm == 0.0:
        norm = 1.0
    d = 1.0 - (gallery @ expanded) / norm
    np.clip(d, 0.0, 2.0, out=d)
    order = np.argsort(d, kind="stable").astype(np.int64)
    return RankedList(query_row, order, d[order])


def aqe_rerank(
    query_row: int, stage1: RankedList, dataset: Dataset, params: QeParams
) -> RankedList:
    """Re-rank against the mean of the query and its top-n results."""
    top = stage1.rows[: min(params.n_expand, stage1.rows.shape[0])]
    return _expand_and_rank(query_row, dataset, top, np.ones(top.shape[0]))


def alpha_qe_rerank(
    query_row: int, stage1: RankedList, dataset: Dataset, params: QeParams
) -> RankedList:
    """Re-rank against a similarity-weighted expansion of the query.

    Neighbor weights are similarity ** qe_alpha with the query itself at
    weight 1; negative similarities clamp to 0 so fractional exponents stay
    defined. qe_alpha = 0 reduces exactly to aqe_rerank.
    """
    n = min(params.n_expand, stage1.rows.shape[0])
    top = stage1.rows[:n]
    sims = np.clip(1.0 - stage1.distances[:n].astype(np.float64), 0.0, None)
    weights = sims**params.qe_alpha
    return _expand_and_rank(query_row, dataset, top, weights)
