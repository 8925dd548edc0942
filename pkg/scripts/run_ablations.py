#!/usr/bin/env python3
"""Run the k / m / alpha ablation sweeps on a synthetic dataset.

Generates the reference synthetic fixture, then drives the CLI sweep
subcommand once per axis. Each sweep writes a CSV with columns
(value, rank1, map, mean_query_ms).

Usage: python scripts/run_ablations.py [--workdir PATH] [--seed N]
"""

import argparse
import subprocess
import sys
from pathlib import Path


def cli(*args: str) -> None:
    cmd = [sys.executable, "-m", "mvrerank", *args]
    print("+", " ".join(cmd))
    subprocess.run(cmd, check=True)


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--workdir", default="ablations")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--identities", type=int, default=200)
    parser.add_argument("--dim", type=int, default=64)
    args = parser.parse_args()

    work = Path(args.workdir)
    data = work / "data"
    work.mkdir(parents=True, exist_ok=True)

    cli(
        "synth",
        "--identities", str(args.identities),
        "--cameras", "4",
        "--images-per", "3",
        "--dim", str(args.dim),
        "--seed", str(args.seed),
        "--out-dir", str(data),
    )

    data_args = [
        "--query-features", str(data / "query_features.npy"),
        "--query-meta", str(data / "query_meta.csv"),
        "--gallery-features", str(data / "gallery_features.npy"),
        "--gallery-meta", str(data / "gallery_meta.csv"),
    ]
    sweeps = {
        "k": "2,3,4,5,6,7,8,9,10",
        "m": "20,40,60,80,100,120,140,160",
        "alpha": "0,0.2,0.4,0.6,0.8,1.0",
    }
    for axis, values in sweeps.items():
        cli(
            "sweep",
            *data_args,
            "--axis", axis,
            "--values", values,
            "--out", str(work / f"sweep_{axis}.csv"),
            "--seed", str(args.seed),
        )
    print(f"\nwrote {', '.join(f'sweep_{a}.csv' for a in sweeps)} under {work}/")


if __name__ == "__main__":
    main()
