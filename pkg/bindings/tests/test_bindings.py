import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

import mvrerank
import mvrerank_bindings as b


@pytest.fixture(scope="module")
def shared_fixture(tmp_path_factory):
    """The synthetic seed-7 fixture, materialized through the engine CLI so
    parity can be checked against the exact files a CLI user would rank."""
    root = tmp_path_factory.mktemp("shared")
    subprocess.run(
        [
            sys.executable, "-m", "mvrerank", "synth",
            "--identities", "20", "--cameras", "3", "--images-per", "2",
            "--dim", "16", "--seed", "7", "--out-dir", str(root),
        ],
        check=True, capture_output=True,
    )
    qf = np.load(root / "query_features.npy")
    gf = np.load(root / "gallery_features.npy")

    def read_meta(name):
        with open(root / name, newline="") as f:
            return list(csv.DictReader(f))

    q_meta = read_meta("query_meta.csv")
    g_meta = read_meta("gallery_meta.csv")
    return root, qf, gf, q_meta, g_meta


def cams(meta_rows):
    return [int(r["camera_id"]) for r in meta_rows]


def pid_cam(meta_rows):
    return [(int(r["person_id"]), int(r["camera_id"])) for r in meta_rows]


class TestPyRerank:
    def test_matches_cli_jsonl_dump(self, shared_fixture, tmp_path):
        root, qf, gf, q_meta, g_meta = shared_fixture
        dump = tmp_path / "rankings.jsonl"
        subprocess.run(
            [
                sys.executable, "-m", "mvrerank", "eval",
                "--query-features", str(root / "query_features.npy"),
                "--query-meta", str(root / "query_meta.csv"),
                "--gallery-features", str(root / "gallery_features.npy"),
                "--gallery-meta", str(root / "gallery_meta.csv"),
                "--method", "kwf", "--k", "4", "--m", "30", "--seed", "0",
                "--dump-ranking", str(dump), "--dump-depth", str(gf.shape[0]),
            ],
            check=True, capture_output=True,
        )
        row_of = {r["image_id"]: i for i, r in enumerate(g_meta)}
        cli_orders = []
        with open(dump) as f:
            for line in f:
                record = json.loads(line)
                cli_orders.append([row_of[g] for g in record["stage2"]])
        got = b.py_rerank(
            qf, gf, cams(g_meta), cams(q_meta), {"k": 4, "m": 30, "seed": 0}
        )
        assert got.shape == (qf.shape[0], gf.shape[0])
        for q in range(qf.shape[0]):
            assert list(got[q]) == cli_orders[q]

    def test_bit_identical_to_engine_native(self, shared_fixture):
        _, qf, gf, q_meta, g_meta = shared_fixture
        got = b.py_rerank(qf, gf, cams(g_meta), cams(q_meta), {"k": 3, "m": 20})
        ds = mvrerank.validate(
            mvrerank.Dataset(
                query_features=mvrerank.FeatureMatrix(qf),
                query_meta=[
                    mvrerank.ItemMeta(f"q{i}", 0, c) for i, c in enumerate(cams(q_meta))
                ],
                gallery_features=mvrerank.FeatureMatrix(gf),
                gallery_meta=[
                    mvrerank.ItemMeta(f"g{i}", 0, c) for i, c in enumerate(cams(g_meta))
                ],
            )
        )
        native = mvrerank.run_all(ds, mvrerank.KwfParams(k=3, m=20))
        for q, result in enumerate(native):
            assert got[q].tobytes() == result.stage2.rows.tobytes()

    def test_alpha_zero_is_cosine_argsort(self, shared_fixture):
        _, qf, gf, q_meta, g_meta = shared_fixture
        got = b.py_rerank(
            qf, gf, cams(g_meta), cams(q_meta), {"alpha": 0.0, "k": 3, "m": 10}
        )
        for q in range(qf.shape[0]):
            d = 1.0 - (gf @ qf[q]).astype(np.float64)
            expected = np.lexsort((np.arange(gf.shape[0]), d))
            assert list(got[q]) == list(expected)

    def test_zero_queries_give_empty_result(self, shared_fixture):
        _, _, gf, _, g_meta = shared_fixture
        out = b.py_rerank(
            np.empty((0, gf.shape[1]), dtype=np.float32), gf, cams(g_meta), [], {}
        )
        assert out.shape == (0, gf.shape[0])

    def test_caller_arrays_are_never_mutated(self, shared_fixture):
        _, qf, gf, q_meta, g_meta = shared_fixture
        qf = qf.copy()
        gf = gf.copy()
        g_cams = np.array(cams(g_meta))
        q_cams = np.array(cams(q_meta))
        before = [hashlib.sha256(a.tobytes()).hexdigest() for a in (qf, gf, g_cams, q_cams)]
        b.py_rerank(qf, gf, g_cams, q_cams, {"k": 3, "m": 10})
        after = [hashlib.sha256(a.tobytes()).hexdigest() for a in (qf, gf, g_cams, q_cams)]
        assert before == after

    def test_shape_mismatch_raises(self, shared_fixture):
        _, qf, gf, q_meta, g_meta = shared_fixture
        with pytest.raises(ValueError, match="dimension mismatch"):
            b.py_rerank(qf[:, :-1], gf, cams(g_meta), cams(q_meta), {})
        with pytest.raises(ValueError, match="gallery_cams"):
            b.py_rerank(qf, gf, cams(g_meta)[:-1], cams(q_meta), {})

    def test_invalid_option_raises(self, shared_fixture):
        _, qf, gf, q_meta, g_meta = shared_fixture
        with pytest.raises(mvrerank.ConfigError, match="invalid option"):
            b.py_rerank(qf, gf, cams(g_meta), cams(q_meta), {"banana": 1})
        with pytest.raises(mvrerank.ConfigError):
            b.py_rerank(qf, gf, cams(g_meta), cams(q_meta), {"k": 0})

    def test_approximate_backend_options_accepted(self, shared_fixture):
        _, qf, gf, q_meta, g_meta = shared_fixture
        out = b.py_rerank(
            qf, gf, cams(g_meta), cams(q_meta),
            {"index": "ivfflat", "nlist": 5, "nprobe": 5, "k": 3, "m": 10, "seed": 1},
        )
        assert out.shape == (qf.shape[0], gf.shape[0])


class TestPyEvaluate:
    def test_perfect_rankings(self):
        rankings = np.array([[0, 1], [1, 0]])
        out = b.py_evaluate(
            rankings,
            [(1, 0), (2, 0)],
            [(1, 1), (2, 1)],
        )
        assert out["rank1"] == 1.0
        assert out["map"] == 1.0
        assert out["evaluated"] == 2 and out["skipped"] == 0

    def test_matches_at_ranks_one_and_three(self):
        # q0 matches at rank 1; q1 at rank 3 -> rank1 = 0.5
        rankings = np.array([[0, 1, 2, 3], [0, 1, 2, 3]])
        out = b.py_evaluate(
            rankings,
            [(1, 0), (2, 0)],
            [(1, 1), (9, 1), (2, 1), (5, 1)],
        )
        assert out["rank1"] == 0.5
        assert out["cmc"][2] == 1.0

    def test_junk_only_query_is_skipped(self):
        rankings = np.array([[0, 1], [0, 1]])
        out = b.py_evaluate(
            rankings,
            [(1, 0), (2, 0)],
            [(1, 0), (2, 1)],  # q0's person only on its own camera
        )
        assert out["skipped"] == 1
        assert out["evaluated"] == 1

    def test_matches_engine_native_report(self, shared_fixture):
        _, qf, gf, q_meta, g_meta = shared_fixture
        rankings = b.py_rerank(qf, gf, cams(g_meta), cams(q_meta), {"k": 3, "m": 20})
        out = b.py_evaluate(rankings, pid_cam(q_meta), pid_cam(g_meta))
        ds = mvrerank.validate(
            mvrerank.Dataset(
                query_features=mvrerank.FeatureMatrix(qf),
                query_meta=[
                    mvrerank.ItemMeta(f"q{i}", p, c)
                    for i, (p, c) in enumerate(pid_cam(q_meta))
                ],
                gallery_features=mvrerank.FeatureMatrix(gf),
                gallery_meta=[
                    mvrerank.ItemMeta(f"g{i}", p, c)
                    for i, (p, c) in enumerate(pid_cam(g_meta))
                ],
            )
        )
        native = mvrerank.evaluate(mvrerank.run_all(ds, mvrerank.KwfParams(k=3, m=20)), ds)
        assert out["rank1"] == native.rank(1)
        assert out["map"] == native.map
        assert out["cmc"] == [float(v) for v in native.cmc]

    def test_dict_metadata_accepted(self):
        out = b.py_evaluate(
            np.array([[0]]),
            [{"person_id": 1, "camera_id": 0}],
            [{"person_id": 1, "camera_id": 2}],
        )
        assert out["rank1"] == 1.0

    def test_shape_checks(self):
        with pytest.raises(ValueError, match="2-D"):
            b.py_evaluate(np.array([0, 1]), [(1, 0)], [(1, 1), (2, 1)])
        with pytest.raises(ValueError, match="queries"):
            b.py_evaluate(np.array([[0, 1]]), [(1, 0), (2, 0)], [(1, 1), (2, 1)])


class TestSurface:
    def test_version_matches_engine(self):
        assert b.__version__ == mvrerank.__version__

    def test_exactly_two_entry_points(self):
        assert set(b.__all__) == {"py_rerank", "py_evaluate", "__version__"}
