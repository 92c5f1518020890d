"""Train CO-BED designs on the desk presets and score them against the baselines.

Each preset gets a design run, a set of baseline designs and an evaluation per design;
the combined metrics land in ``<out>/comparison.csv``.

    python scripts/run_desk_experiments.py --presets desk_discrete_quadratic desk_continuous_bump
"""

import argparse
import csv
import json
from pathlib import Path

import numpy as np

from ctxbed.cli import run_design, run_evaluate
from ctxbed.config import load_config
from ctxbed.evaluate import METRICS_COLUMNS

BASELINES = {
    "discrete": [{"kind": "random"}, {"kind": "ucb", "alpha": 0.0}, {"kind": "ucb", "alpha": 1.0},
                 {"kind": "thompson"}],
    "continuous": [{"kind": "random", "sigma": 2.0}, {"kind": "random", "sigma": 5.0},
                   {"kind": "ucb", "alpha": 1.0}, {"kind": "thompson"}],
    "bounded": [{"kind": "random"}, {"kind": "ucb", "alpha": 1.0}, {"kind": "thompson"}],
    "box-binary": [{"kind": "random", "p": 0.5}, {"kind": "thompson"}],
}
DEFAULT = ["desk_discrete_quadratic", "desk_continuous_bump", "desk_gp", "desk_linear_bandit",
           "desk_causal_graph"]


def space_kind(cfg):
    from ctxbed.cli import setup_model

    space = setup_model(cfg)[0].action_space
    return "bounded" if space.kind == "continuous" and np.isfinite(space.lower) else space.kind


def run_preset(name, out, overrides):
    rows = []
    base = load_config(name, overrides)
    methods = [{"kind": "cobed"}] + BASELINES[space_kind(base)]
    for method in methods:
        label = "_".join(f"{v}" for v in method.values())
        flat = dict(overrides)
        flat.update({f"method.{k}": v for k, v in method.items()})
        cfg = load_config(name, flat)
        run_dir = out / name / label
        print(f"[{name}] {label}: design", flush=True)
        run_design(cfg, run_dir / "design")
        report = run_evaluate(cfg, run_dir / "design" / "design.json", run_dir / "eval")
        rows.append({"preset": name, **report.to_json()})
        print(f"[{name}] {label}: regret {report.regret:.4f} +- {report.regret_se:.4f}", flush=True)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--presets", nargs="+", default=DEFAULT)
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--environments", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--steps", type=int, help="override training steps (quick smoke runs)")
    ap.add_argument("--no-eig", action="store_true", help="skip the critic-based EIG estimate")
    args = ap.parse_args()

    overrides = {}
    if args.environments:
        overrides["evaluate.environments"] = args.environments
    if args.steps:
        overrides["train.steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.no_eig:
        overrides["evaluate.eig"] = False
    out = Path(args.out)
    rows = []
    for name in args.presets:
        rows += run_preset(name, out, overrides)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["preset", *METRICS_COLUMNS], extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    print(json.dumps({"rows": len(rows), "csv": str(out / "comparison.csv")}))


if __name__ == "__main__":
    main()
