import collections

import numpy as np
import pytest

from mvrerank import ConfigError, KwfParams, SynthConfig, build_flat, evaluate, generate, run_all
from mvrerank.metrics import MetricsAccumulator
from mvrerank.pipeline import initial_rank


def stage1_rank1(ds) -> float:
    index = build_flat(ds.gallery_features)
    acc = MetricsAccumulator(ds)
    for q in range(ds.query_features.rows):
        acc.add(q, initial_rank(q, ds, index).rows)
    return acc.report().rank(1)


class TestGenerate:
    def test_same_seed_is_byte_identical(self):
        cfg = SynthConfig(identities=8, cameras=3, images_per_identity_per_camera=2, dim=16, seed=9)
        a = generate(cfg)
        b = generate(cfg)
        assert a.query_features.values.tobytes() == b.query_features.values.tobytes()
        assert a.gallery_features.values.tobytes() == b.gallery_features.values.tobytes()
        assert a.gallery_meta == b.gallery_meta

    def test_different_seeds_differ(self):
        cfg = SynthConfig(identities=8, cameras=3, images_per_identity_per_camera=2, dim=16, seed=1)
        other = SynthConfig(identities=8, cameras=3, images_per_identity_per_camera=2, dim=16, seed=2)
        assert (
            generate(cfg).gallery_features.values.tobytes()
            != generate(other).gallery_features.values.tobytes()
        )

    def test_degenerate_sigmas_collapse_identities(self):
        cfg = SynthConfig(
            identities=6,
            cameras=3,
            images_per_identity_per_camera=2,
            dim=16,
            view_bias_sigma=0.0,
            noise_sigma=0.0,
            seed=4,
        )
        ds = generate(cfg)
        by_pid = collections.defaultdict(list)
        for i, m in enumerate(ds.gallery_meta):
            by_pid[m.person_id].append(ds.gallery_features.values[i])
        for rows in by_pid.values():
            for row in rows[1:]:
                np.testing.assert_array_equal(row, rows[0])
        assert stage1_rank1(ds) == 1.0

    def test_rows_are_unit_norm(self):
        ds = generate(SynthConfig(identities=5, cameras=2, images_per_identity_per_camera=2, dim=8, seed=0))
        for mat in (ds.query_features, ds.gallery_features):
            norms = np.linalg.norm(mat.values.astype(np.float64), axis=1)
            np.testing.assert_allclose(norms, 1.0, atol=1e-5)

    def test_metadata_alignment_and_camera_coverage(self):
        cfg = SynthConfig(identities=7, cameras=3, images_per_identity_per_camera=2, dim=8, seed=2)
        ds = generate(cfg)
        assert len(ds.query_meta) == cfg.identities
        assert all(m.camera_id == 0 for m in ds.query_meta)
        expected_gallery = cfg.identities * (cfg.cameras * 2 - 1)
        assert ds.gallery_features.rows == expected_gallery
        cams_per_id = collections.defaultdict(set)
        for m in ds.gallery_meta:
            cams_per_id[m.person_id].add(m.camera_id)
        assert all(len(c) >= 2 for c in cams_per_id.values())
        for i, m in enumerate(ds.gallery_meta):
            pid, cam, _ = m.image_id.split("_")
            assert int(pid) == m.person_id
            assert int(cam[1:]) == m.camera_id

    def test_view_bias_does_not_raise_rank1(self):
        """Statistically over 10 seeds: stronger per-camera offsets never make
        the first stage easier."""
        low, high = [], []
        for seed in range(10):
            base = dict(
                identities=16,
                cameras=3,
                images_per_identity_per_camera=2,
                dim=32,
                noise_sigma=0.2,
                seed=seed,
            )
            low.append(stage1_rank1(generate(SynthConfig(view_bias_sigma=0.3, **base))))
            high.append(stage1_rank1(generate(SynthConfig(view_bias_sigma=1.2, **base))))
        assert np.mean(high) <= np.mean(low) + 0.02

    def test_stage2_beats_stage1_on_reference_fixture(self):
        ds = generate(SynthConfig(seed=7))
        results = run_all(ds, KwfParams(k=6, m=100))
        stage2 = evaluate(results, ds)
        stage1 = evaluate([r.stage1 for r in results], ds)
        assert stage2.rank(1) > stage1.rank(1)


class TestConfigValidation:
    def test_too_few_identities(self):
        with pytest.raises(ConfigError):
            SynthConfig(identities=1)

    def test_too_few_cameras(self):
        with pytest.raises(ConfigError):
            SynthConfig(cameras=1)

    def test_bad_dim(self):
        with pytest.raises(ConfigError):
            SynthConfig(dim=1)

    def test_negative_sigma(self):
        with pytest.raises(ConfigError):
            SynthConfig(noise_sigma=-0.1)
