"""Deterministic view-biased synthetic feature datasets.

Each identity is a point on the unit sphere; every camera adds one shared
offset vector, modeling the systematic appearance shift between views.
Per-image gaussian noise is added on top and each feature is re-normalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, FeatureMatrix, ItemMeta, validate
from .errors import ConfigError

QUERY_CAMERA = 0


@dataclass(frozen=True)
class SynthConfig:
    identities: int = 50
    cameras: int = 4
    images_per_identity_per_camera: int = 3
    dim: int = 64
    view_bias_sigma: float = 0.8
    noise_sigma: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.identities < 2:
            raise ConfigError(f"identities must be >= 2, got {self.identities}")
        if self.cameras < 2:
            raise ConfigError(f"cameras must be >= 2, got {self.cameras}")
        if self.dim < 2:
            raise ConfigError(f"dim must be >= 2, got {self.dim}")
        if self.images_per_identity_per_camera < 1:
            raise ConfigError("images_per_identity_per_camera must be >= 1")
        if self.view_bias_sigma < 0 or self.noise_sigma < 0:
            raise ConfigError("sigmas must be >= 0")


def generate(config: SynthConfig) -> Dataset:
    """Build a dataset where the first image of each identity on camera 0
    is a query and every other image lands in the gallery."""
    rng = np.random.default_rng(config.seed)
    ids, cams, per, dim = (
        config.identities,
        config.cameras,
        config.images_per_identity_per_camera,
        config.dim,
    )
    centers = rng.standard_normal((ids, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    offsets = rng.standard_normal((cams, dim))
    offsets = offsets / np.linalg.norm(offsets, axis=1, keepdims=True)
    offsets *= config.view_bias_sigma
    noise = rng.standard_normal((ids, cams, per, dim)) * config.noise_sigma

    features = centers[:, None, None, :] + offsets[None, :, None, :] + noise
    features /= np.linalg.norm(features, axis=3, keepdims=True)

    query_rows, gallery_rows = [], []
    query_meta, gallery_meta = [], []
    for i in range(ids):
        for c in range(cams):
            for j in range(per):
                meta = ItemMeta(f"{i:05d}_c{c}_{j:02d}", i, c)
                if c == QUERY_CAMERA and j == 0:
                    query_rows.append(features[i, c, j])
                    query_meta.append(meta)
                else:
                    gallery_rows.append(features[i, c, j])
                    gallery_meta.append(meta)

    return validate(
        Dataset(
            query_features=FeatureMatrix(np.array(query_rows, dtype=np.float32)),
            query_meta=query_meta,
            gallery_features=FeatureMatrix(np.array(gallery_rows, dtype=np.float32)),
            gallery_meta=gallery_meta,
        )
    )
