"""Two-stage person re-identification ranking with multi-view feature fusion."""

__version__ = "0.1.0"

from .baselines import QeParams, alpha_qe_rerank, aqe_rerank
from .dataset import (
    Dataset,
    FeatureMatrix,
    ItemMeta,
    load_dataset,
    load_features,
    load_meta,
    save_features,
    save_meta,
    validate,
)
from .distance import cosine_distance, pairwise_distances
from .errors import ConfigError, InputDataError, MemoryBudgetError
from .index import (
    FlatIndex,
    IvfFlatIndex,
    LshIndex,
    NeighborHit,
    build_flat,
    build_index,
    build_ivf_flat,
    build_lsh,
    knn,
    load_index,
    save_index,
)
from .kwf import (
    FusedFeature,
    KwfParams,
    MultiViewFuser,
    WeightingStrategy,
    blend,
    compute_weights,
    fuse,
    multi_view_feature,
)
from .metrics import MetricsReport, evaluate, query_eval
from .pipeline import RankedList, RerankResult, initial_rank, rerank, run_all
from .synth import SynthConfig, generate

__all__ = [
    "__version__",
    "ConfigError",
    "Dataset",
    "FeatureMatrix",
    "FlatIndex",
    "FusedFeature",
    "InputDataError",
    "ItemMeta",
    "IvfFlatIndex",
    "KwfParams",
    "LshIndex",
    "MemoryBudgetError",
    "MetricsReport",
    "MultiViewFuser",
    "NeighborHit",
    "QeParams",
    "RankedList",
    "RerankResult",
    "SynthConfig",
    "WeightingStrategy",
    "alpha_qe_rerank",
    "aqe_rerank",
    "blend",
    "build_flat",
    "build_index",
    "build_ivf_flat",
    "build_lsh",
    "compute_weights",
    "cosine_distance",
    "evaluate",
    "fuse",
    "generate",
    "initial_rank",
    "knn",
    "load_dataset",
    "load_features",
    "load_index",
    "load_meta",
    "multi_view_feature",
    "pairwise_distances",
    "query_eval",
    "rerank",
    "run_all",
    "save_features",
    "save_index",
    "save_meta",
    "validate",
]
