import csv
import json

import pytest

from mvrerank.cli import main


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data")
    rc = main(
        [
            "synth",
            "--identities", "12",
            "--cameras", "3",
            "--images-per", "2",
            "--dim", "16",
            "--seed", "3",
            "--out-dir", str(root),
        ]
    )
    assert rc == 0
    return root


def data_args(root):
    return [
        "--query-features", str(root / "query_features.npy"),
        "--query-meta", str(root / "query_meta.csv"),
        "--gallery-features", str(root / "gallery_features.npy"),
        "--gallery-meta", str(root / "gallery_meta.csv"),
    ]


def run_eval(root, out, *extra):
    rc = main(["eval", *data_args(root), "--out", str(out), *extra])
    assert rc == 0
    with open(out) as f:
        return json.load(f)


class TestEval:
    def test_method_none_reports_stage1_metrics(self, data_dir, tmp_path):
        report = run_eval(data_dir, tmp_path / "r.json", "--method", "none")
        from mvrerank import build_flat, evaluate, initial_rank, load_dataset

        ds = load_dataset(*[a for a in data_args(data_dir)[1::2]])
        index = build_flat(ds.gallery_features)
        lists = [initial_rank(q, ds, index) for q in range(ds.query_features.rows)]
        expected = evaluate(lists, ds)
        assert report["rank1"] == expected.rank(1)
        assert report["map"] == pytest.approx(expected.map, abs=1e-12)

    def test_alpha_zero_equals_method_none(self, data_dir, tmp_path):
        none = run_eval(data_dir, tmp_path / "none.json", "--method", "none")
        zero = run_eval(
            data_dir, tmp_path / "zero.json", "--method", "kwf", "--alpha", "0"
        )
        assert none["rank1"] == zero["rank1"]
        assert none["map"] == zero["map"]
        assert none["cmc"] == zero["cmc"]

    def test_reference_configuration_runs(self, data_dir, tmp_path):
        report = run_eval(
            data_dir,
            tmp_path / "ref.json",
            "--method", "kwf",
            "--k", "6",
            "--m", "100",
            "--weighting", "idp",
            "--p", "2",
            "--alpha", "1",
        )
        cfg = report["config"]
        assert (cfg["k"], cfg["m"], cfg["p"], cfg["alpha"]) == (6, 100, 2.0, 1.0)
        assert cfg["weighting"] == "idp"
        assert cfg["seed"] == 0

    def test_rerunning_embedded_config_reproduces_metrics(self, data_dir, tmp_path):
        first = run_eval(data_dir, tmp_path / "a.json", "--method", "kwf", "--k", "4")
        cfg = first["config"]
        again = run_eval(
            data_dir,
            tmp_path / "b.json",
            "--method", cfg["method"],
            "--k", str(cfg["k"]),
            "--m", str(cfg["m"]),
            "--weighting", cfg["weighting"],
            "--alpha", str(cfg["alpha"]),
            "--index", cfg["index"],
            "--seed", str(cfg["seed"]),
        )
        assert first["rank1"] == again["rank1"]
        assert first["map"] == again["map"]
        assert first["cmc"] == again["cmc"]

    def test_dump_ranking_depth_and_determinism(self, data_dir, tmp_path):
        dumps = []
        for name in ("d1.jsonl", "d2.jsonl"):
            rc = main(
                [
                    "eval",
                    *data_args(data_dir),
                    "--method", "kwf",
                    "--dump-ranking", str(tmp_path / name),
                    "--dump-depth", "5",
                ]
            )
            assert rc == 0
            dumps.append((tmp_path / name).read_bytes())
        assert dumps[0] == dumps[1]
        lines = dumps[0].decode().strip().split("\n")
        assert len(lines) == 12
        record = json.loads(lines[0])
        assert set(record) == {"query_id", "stage1", "stage2"}
        assert len(record["stage1"]) == 5 and len(record["stage2"]) == 5

    def test_baseline_methods_run(self, data_dir, tmp_path):
        for method in ("aqe", "alphaqe"):
            report = run_eval(data_dir, tmp_path / f"{method}.json", "--method", method)
            assert 0.0 <= report["map"] <= 1.0


class TestExitCodes:
    def test_missing_input_file_is_2(self, tmp_path):
        rc = main(
            [
                "eval",
                "--query-features", str(tmp_path / "missing.npy"),
                "--query-meta", str(tmp_path / "missing.csv"),
                "--gallery-features", str(tmp_path / "missing.npy"),
                "--gallery-meta", str(tmp_path / "missing.csv"),
            ]
        )
        assert rc == 2

    def test_p_without_idp_is_3(self, data_dir):
        rc = main(
            ["eval", *data_args(data_dir), "--weighting", "uniform", "--p", "3"]
        )
        assert rc == 3

    def test_unknown_flag_value_is_3(self, data_dir):
        rc = main(["eval", *data_args(data_dir), "--index", "hnsw"])
        assert rc == 3

    def test_bad_sweep_values_is_3(self, data_dir, tmp_path):
        rc = main(
            [
                "sweep",
                *data_args(data_dir),
                "--axis", "k",
                "--values", "2,x",
                "--out", str(tmp_path / "s.csv"),
            ]
        )
        assert rc == 3


class TestSweep:
    def _rows(self, path):
        with open(path) as f:
            return list(csv.DictReader(f))

    def test_k_axis_row_count(self, data_dir, tmp_path):
        out = tmp_path / "k.csv"
        rc = main(
            [
                "sweep",
                *data_args(data_dir),
                "--axis", "k",
                "--values", "2,3,4,5,6,7,8,9,10",
                "--out", str(out),
            ]
        )
        assert rc == 0
        rows = self._rows(out)
        assert len(rows) == 9
        assert [r["value"] for r in rows] == [str(v) for v in range(2, 11)]

    def test_alpha_axis(self, data_dir, tmp_path):
        out = tmp_path / "alpha.csv"
        rc = main(
            [
                "sweep",
                *data_args(data_dir),
                "--axis", "alpha",
                "--values", "0,0.2,0.4,0.6,0.8,1.0",
                "--out", str(out),
            ]
        )
        assert rc == 0
        rows = self._rows(out)
        assert len(rows) == 6
        assert all(set(r) == {"value", "rank1", "map", "mean_query_ms"} for r in rows)

    def test_report_dir_writes_per_value_reports(self, data_dir, tmp_path):
        out = tmp_path / "m.csv"
        rc = main(
            [
                "sweep",
                *data_args(data_dir),
                "--axis", "m",
                "--values", "5,10",
                "--out", str(out),
                "--report-dir", str(tmp_path / "reports"),
            ]
        )
        assert rc == 0
        assert (tmp_path / "reports" / "m_5.json").exists()
        assert (tmp_path / "reports" / "m_10.json").exists()


class TestBench:
    def test_single_repeat_has_zero_std(self, data_dir, tmp_path):
        out = tmp_path / "bench.json"
        rc = main(
            ["bench", *data_args(data_dir), "--repeats", "1", "--out", str(out)]
        )
        assert rc == 0
        payload = json.loads(out.read_text())
        assert payload["total_wall_s_std"] == 0.0
        assert payload["gallery_feature_bytes"] > 0

    def test_metrics_identical_across_benches(self, data_dir, tmp_path):
        payloads = []
        for name in ("b1.json", "b2.json"):
            rc = main(
                ["bench", *data_args(data_dir), "--repeats", "2", "--out", str(tmp_path / name)]
            )
            assert rc == 0
            payloads.append(json.loads((tmp_path / name).read_text()))
        a, b = payloads
        assert a["metrics"]["rank1"] == b["metrics"]["rank1"]
        assert a["metrics"]["map"] == b["metrics"]["map"]
        assert a["metrics"]["cmc"] == b["metrics"]["cmc"]


class TestSynthCommand:
    def test_written_files_load(self, data_dir):
        from mvrerank import load_dataset

        ds = load_dataset(
            data_dir / "query_features.npy",
            data_dir / "query_meta.csv",
            data_dir / "gallery_features.npy",
            data_dir / "gallery_meta.csv",
        )
        assert ds.query_features.rows == 12
        assert ds.gallery_features.rows == 12 * (3 * 2 - 1)

    def test_matches_library_generation(self, data_dir):
        from mvrerank import SynthConfig, generate, load_features

        ds = generate(
            SynthConfig(identities=12, cameras=3, images_per_identity_per_camera=2, dim=16, seed=3)
        )
        on_disk = load_features(data_dir / "gallery_features.npy")
        import numpy as np

        np.testing.assert_allclose(on_disk.values, ds.gallery_features.values, atol=1e-6)
