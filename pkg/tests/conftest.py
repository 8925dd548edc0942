import numpy as np
import pytest

from mvrerank import Dataset, FeatureMatrix, ItemMeta, SynthConfig, generate, validate


def make_dataset(query_rows, query_meta, gallery_rows, gallery_meta) -> Dataset:
    return validate(
        Dataset(
            query_features=FeatureMatrix(np.array(query_rows, dtype=np.float32)),
            query_meta=list(query_meta),
            gallery_features=FeatureMatrix(np.array(gallery_rows, dtype=np.float32)),
            gallery_meta=list(gallery_meta),
        )
    )


def meta(image_id, person_id, camera_id) -> ItemMeta:
    return ItemMeta(image_id, person_id, camera_id)


@pytest.fixture
def tiny_dataset() -> Dataset:
    """One query (1,0) against gallery rows (1,0), (0,1), (0.6,0.8)."""
    return make_dataset(
        [(1.0, 0.0)],
        [meta("q0", 1, 0)],
        [(1.0, 0.0), (0.0, 1.0), (0.6, 0.8)],
        [meta("g0", 1, 1), meta("g1", 2, 2), meta("g2", 1, 2)],
    )


@pytest.fixture
def small_synth() -> Dataset:
    return generate(
        SynthConfig(
            identities=12,
            cameras=3,
            images_per_identity_per_camera=2,
            dim=16,
            seed=3,
        )
    )


def random_unit_rows(rng, n, dim) -> np.ndarray:
    x = rng.standard_normal((n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x.astype(np.float32)
