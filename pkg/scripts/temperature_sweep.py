"""Temperature robustness sweep: final-bound spread across seeds for each initial temperature.

    python scripts/temperature_sweep.py --seeds 8 --out runs/sweep_temperature
"""

import argparse
from pathlib import Path

from ctxbed.cli import run_sweep
from ctxbed.config import load_json


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default="desk_temperature_base")
    ap.add_argument("--temperatures", type=float, nargs="+", default=[0.1, 2.0, 10.0])
    ap.add_argument("--seeds", type=int, default=8)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="runs/sweep_temperature")
    args = ap.parse_args()

    sweep = {"parameters": {"train.temperature.initial": args.temperatures}, "n_seeds": args.seeds}
    records, summary = run_sweep(load_json(args.config), sweep, Path(args.out), args.jobs)
    failed = sum(r["status"] != "ok" for r in records)
    print(f"{len(records)} runs, {failed} failed")
    for row in summary:
        print(f"{row['cell']:40s} mean={row['mean']:.4f} std={row['std']:.4f} "
              f"[{row['lower']:.4f}, {row['upper']:.4f}]")


if __name__ == "__main__":
    main()
