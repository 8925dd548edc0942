"""Command-line front end: eval, sweep, bench, and synth."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .baselines import QeParams, alpha_qe_rerank, aqe_rerank
from .dataset import Dataset, load_dataset, save_features, save_meta
from .errors import ConfigError, InputDataError
from .index import build_index, default_nlist
from .kwf import KwfParams, MultiViewFuser, WeightingStrategy
from .metrics import MetricsAccumulator, format_table, report_to_dict
from .pipeline import initial_rank, rerank
from .synth import SynthConfig, generate

WEIGHTING_NAMES = {"uniform": "uniform", "idp": "inverse_distance_power", "expdecay": "exponential_decay"}
INDEX_NAMES = {"flat": "flat", "ivfflat": "ivf_flat", "lsh": "lsh"}

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONFIG = 3
EXIT_INTERNAL = 4


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit code 3)."""

    def error(self, message):
        raise ConfigError(message)


def _add_data_args(p):
    p.add_argument("--query-features", required=True)
    p.add_argument("--query-meta", required=True)
    p.add_argument("--gallery-features", required=True)
    p.add_argument("--gallery-meta", required=True)


def _add_run_args(p):
    p.add_argument("--method", choices=["kwf", "aqe", "alphaqe", "none"], default="kwf")
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--weighting", choices=sorted(WEIGHTING_NAMES), default="idp")
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--include-self", action="store_true")
    p.add_argument("--n-expand", type=int, default=10)
    p.add_argument("--qe-alpha", type=float, default=3.0)
    p.add_argument("--index", choices=sorted(INDEX_NAMES), default="flat")
    p.add_argument("--nlist", type=int, default=None)
    p.add_argument("--nprobe", type=int, default=8)
    p.add_argument("--bits", type=int, default=512)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-rank", type=int, default=20)


def build_parser() -> _Parser:
    parser = _Parser(prog="mvrerank", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="run one configuration and report CMC/mAP")
    _add_data_args(p_eval)
    _add_run_args(p_eval)
    p_eval.add_argument("--out", default=None, help="write the JSON report here")
    p_eval.add_argument("--dump-ranking", default=None, help="write per-query JSONL rankings")
    p_eval.add_argument("--dump-depth", type=int, default=100)

    p_sweep = sub.add_parser("sweep", help="re-run eval over one hyperparameter axis")
    _add_data_args(p_sweep)
    _add_run_args(p_sweep)
    p_sweep.add_argument("--axis", choices=["k", "m", "alpha"], required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated axis values")
    p_sweep.add_argument("--out", required=True, help="combined CSV output path")
    p_sweep.add_argument("--report-dir", default=None, help="optional per-value JSON reports")

    p_bench = sub.add_parser("bench", help="timed repeats plus a re-rank memory probe")
    _add_data_args(p_bench)
    _add_run_args(p_bench)
    p_bench.add_argument("--repeats", type=int, default=5)
    p_bench.add_argument("--out", default=None)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset on disk")
    p_synth.add_argument("--identities", type=int, default=50)
    p_synth.add_argument("--cameras", type=int, default=4)
    p_synth.add_argument("--images-per", type=int, default=3)
    p_synth.add_argument("--dim", type=int, default=64)
    p_synth.add_argument("--view-bias", type=float, default=0.8)
    p_synth.add_argument("--noise", type=float, default=0.2)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out-dir", required=True)
    return parser


def _kwf_params(args) -> KwfParams:
    if args.p is not None and args.weighting != "idp":
        raise ConfigError("--p only applies to --weighting idp")
    strategy = WeightingStrategy(
        WEIGHTING_NAMES[args.weighting], args.p if args.p is not None else 2.0
    )
    return KwfParams(
        k=args.k,
        m=args.m,
        strategy=strategy,
        alpha=args.alpha,
        include_self=args.include_self,
    )


def _effective_config(args, dataset: Dataset) -> dict:
    nlist = args.nlist if args.nlist is not None else default_nlist(dataset.gallery_features.rows)
    return {
        "command": args.command,
        "query_features": args.query_features,
        "query_meta": args.query_meta,
        "gallery_features": args.gallery_features,
        "gallery_meta": args.gallery_meta,
        "method": args.method,
        "k": args.k,
        "m": args.m,
        "weighting": args.weighting,
        "p": args.p if args.p is not None else 2.0,
        "alpha": args.alpha,
        "include_self": args.include_self,
        "n_expand": args.n_expand,
        "qe_alpha": args.qe_alpha,
        "index": args.index,
        "nlist": nlist,
        "nprobe": args.nprobe,
        "bits": args.bits,
        "threads": args.threads,
        "seed": args.seed,
        "max_rank": args.max_rank,
    }


class _RssPeak:
    """Tracks the process's peak resident set size across probe calls."""

    def __init__(self):
        import psutil

        self._process = psutil.Process()
        self.peak = 0

    def __call__(self):
        rss = self._process.memory_info().rss
        if rss > self.peak:
            self.peak = rss

    def current(self) -> int:
        return self._process.memory_info().rss


def run_streaming(
    dataset: Dataset,
    index,
    method: str,
    kwf_params: KwfParams,
    qe_params: QeParams,
    *,
    threads: int = 1,
    max_rank: int = 20,
    dump_depth: int | None = None,
    fuser: MultiViewFuser | None = None,
    rss_probe=None,
):
    """Evaluate every query without retaining full ranked lists.

    Returns (MetricsReport, dump_records); dump_records is None unless
    dump_depth is set.
    """
    if fuser is None:
        fuser = MultiViewFuser(
            index, dataset.gallery_camera_ids, kwf_params, probe=rss_probe
        )
    acc = MetricsAccumulator(dataset, max_rank=max_rank)
    n_queries = dataset.query_features.rows
    dumps: list[dict] | None = [] if dump_depth is not None else None
    gallery_ids = [m.image_id for m in dataset.gallery_meta]
    stage1_s = 0.0
    stage2_s = 0.0

    def one(query_row: int):
        t0 = time.perf_counter()
        stage1 = initial_rank(query_row, dataset, index)
        t1 = time.perf_counter()
        if method == "none":
            final = stage1
        elif method == "kwf":
            final = rerank(query_row, stage1, dataset, index, kwf_params, fuser=fuser).stage2
        elif method == "aqe":
            final = aqe_rerank(query_row, stage1, dataset, qe_params)
        elif method == "alphaqe":
            final = alpha_qe_rerank(query_row, stage1, dataset, qe_params)
        else:
            raise ConfigError(f"unknown method {method!r}")
        t2 = time.perf_counter()
        return query_row, stage1, final, t1 - t0, t2 - t1

    def consume(result):
        nonlocal stage1_s, stage2_s
        query_row, stage1, final, dt1, dt2 = result
        acc.add(query_row, final.rows)
        stage1_s += dt1
        stage2_s += dt2
        if dumps is not None:
            dumps.append(
                {
                    "query_id": dataset.query_meta[query_row].image_id,
                    "stage1": [gallery_ids[r] for r in stage1.rows[:dump_depth]],
                    "stage2": [gallery_ids[r] for r in final.rows[:dump_depth]],
                }
            )
        if rss_probe is not None:
            rss_probe()

    t_start = time.perf_counter()
    if threads > 1:
        # Windowed submission keeps only ~2*threads full ranked lists alive.
        with ThreadPoolExecutor(max_workers=threads) as pool:
            window = 2 * threads
            pending = []
            for q in range(n_queries):
                pending.append(pool.submit(one, q))
                if len(pending) >= window:
                    consume(pending.pop(0).result())
            for fut in pending:
                consume(fut.result())
    else:
        for q in range(n_queries):
            consume(one(q))
    total_s = time.perf_counter() - t_start

    timing = {
        "total_s": total_s,
        "stage1_s": stage1_s,
        "stage2_s": stage2_s,
        "queries": n_queries,
        "mean_query_ms": 1000.0 * (stage1_s + stage2_s) / max(n_queries, 1),
        "mean_stage1_ms": 1000.0 * stage1_s / max(n_queries, 1),
        "mean_stage2_ms": 1000.0 * stage2_s / max(n_queries, 1),
    }
    return acc.report(timing=timing), dumps


def _load_and_index(args):
    dataset = load_dataset(
        args.query_features, args.query_meta, args.gallery_features, args.gallery_meta
    )
    index = build_index(
        dataset.gallery_features,
        INDEX_NAMES[args.index],
        nlist=args.nlist,
        nprobe=args.nprobe,
        bits=args.bits,
        seed=args.seed,
    )
    return dataset, index


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_eval(args) -> int:
    dataset, index = _load_and_index(args)
    report, dumps = run_streaming(
        dataset,
        index,
        args.method,
        _kwf_params(args),
        QeParams(args.n_expand, args.qe_alpha),
        threads=args.threads,
        max_rank=args.max_rank,
        dump_depth=args.dump_depth if args.dump_ranking else None,
    )
    payload = report_to_dict(report)
    payload["config"] = _effective_config(args, dataset)
    print(format_table(report))
    if args.out:
        _write_json(args.out, payload)
    if args.dump_ranking:
        with open(args.dump_ranking, "w", encoding="utf-8") as f:
            for record in dumps:
                f.write(json.dumps(record, sort_keys=True) + "\n")
    return EXIT_OK


def _parse_axis_values(axis: str, raw: str):
    try:
        if axis == "alpha":
            return [float(v) for v in raw.split(",") if v.strip()]
        return [int(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --values for axis {axis}: {raw!r}") from exc


def cmd_sweep(args) -> int:
    values = _parse_axis_values(args.axis, args.values)
    if not values:
        raise ConfigError("--values is empty")
    dataset, index = _load_and_index(args)
    base = _kwf_params(args)
    qe = QeParams(args.n_expand, args.qe_alpha)
    rows = []
    for value in values:
        # Fresh fusion cache per point, so each row reports the standalone
        # cost of its configuration.
        params = dataclasses.replace(base, **{args.axis: value})
        report, _ = run_streaming(
            dataset,
            index,
            args.method,
            params,
            qe,
            threads=args.threads,
            max_rank=args.max_rank,
        )
        rows.append(
            {
                "value": value,
                "rank1": report.rank(1),
                "map": report.map,
                "mean_query_ms": report.timing["mean_query_ms"],
            }
        )
        if args.report_dir:
            os.makedirs(args.report_dir, exist_ok=True)
            payload = report_to_dict(report)
            payload["config"] = _effective_config(args, dataset) | {args.axis: value}
            _write_json(os.path.join(args.report_dir, f"{args.axis}_{value}.json"), payload)
    with open(args.out, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["value", "rank1", "map", "mean_query_ms"])
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(
            f"{args.axis}={row['value']}: rank1={row['rank1']:.4f} "
            f"map={row['map']:.4f} mean_query_ms={row['mean_query_ms']:.3f}"
        )
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.repeats < 1:
        raise ConfigError(f"--repeats must be >= 1, got {args.repeats}")
    dataset, index = _load_and_index(args)
    kwf_params = _kwf_params(args)
    qe = QeParams(args.n_expand, args.qe_alpha)

    # Untimed memory pass first, so the RSS baseline reflects a process that
    # has loaded data and built the index but not yet re-ranked anything.
    probe = _RssPeak()
    baseline_rss = probe.current()
    probe()
    mem_report, _ = run_streaming(
        dataset, index, args.method, kwf_params, qe,
        threads=args.threads, max_rank=args.max_rank, rss_probe=probe,
    )

    totals, stage2_means = [], []
    report = None
    for _ in range(args.repeats):
        report, _ = run_streaming(
            dataset, index, args.method, kwf_params, qe,
            threads=args.threads, max_rank=args.max_rank,
        )
        totals.append(report.timing["total_s"])
        stage2_means.append(report.timing["mean_stage2_ms"])
    payload = {
        "repeats": args.repeats,
        "total_wall_s_mean": float(np.mean(totals)),
        "total_wall_s_std": float(np.std(totals)),
        "mean_stage2_query_ms": float(np.mean(stage2_means)),
        "mean_query_ms": report.timing["mean_query_ms"],
        "gallery_feature_bytes": int(dataset.gallery_features.values.nbytes),
        "peak_rerank_rss_delta_bytes": int(max(probe.peak - baseline_rss, 0)),
        "metrics": report_to_dict(report),
        "config": _effective_config(args, dataset) | {"repeats": args.repeats},
    }
    del mem_report
    print(
        f"total wall: {payload['total_wall_s_mean']:.3f}s "
        f"+/- {payload['total_wall_s_std']:.3f}s over {args.repeats} repeats"
    )
    print(f"mean stage-2 per-query: {payload['mean_stage2_query_ms']:.3f} ms")
    print(
        f"peak re-rank RSS delta: {payload['peak_rerank_rss_delta_bytes'] / 1e6:.1f} MB "
        f"(gallery features: {payload['gallery_feature_bytes'] / 1e6:.1f} MB)"
    )
    if args.out:
        _write_json(args.out, payload)
    return EXIT_OK


def cmd_synth(args) -> int:
    config = SynthConfig(
        identities=args.identities,
        cameras=args.cameras,
        images_per_identity_per_camera=args.images_per,
        dim=args.dim,
        view_bias_sigma=args.view_bias,
        noise_sigma=args.noise,
        seed=args.seed,
    )
    dataset = generate(config)
    os.makedirs(args.out_dir, exist_ok=True)
    paths = {
        "query_features": os.path.join(args.out_dir, "query_features.npy"),
        "query_meta": os.path.join(args.out_dir, "query_meta.csv"),
        "gallery_features": os.path.join(args.out_dir, "gallery_features.npy"),
        "gallery_meta": os.path.join(args.out_dir, "gallery_meta.csv"),
    }
    save_features(paths["query_features"], dataset.query_features)
    save_meta(paths["query_meta"], dataset.query_meta)
    save_features(paths["gallery_features"], dataset.gallery_features)
    save_meta(paths["gallery_meta"], dataset.gallery_meta)
    print(
        f"wrote {dataset.query_features.rows} queries and "
        f"{dataset.gallery_features.rows} gallery rows to {args.out_dir}"
    )
    return EXIT_OK


_COMMANDS = {"eval": cmd_eval, "sweep": cmd_sweep, "bench": cmd_bench, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except InputDataError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, AssertionError, RuntimeError) as exc:
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
