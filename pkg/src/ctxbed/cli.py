"""Command line entry point: ``ctxbed design | evaluate | sweep | presets``."""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import BaselineSpec, baseline_design
from .config import (ConfigError, ExperimentConfig, load_json, parse_config, preset_names, resolve_rows,
                     set_path, sweep_names)
from .critic import init_critic, resolve_hidden
from .design import DesignError, load_design, make_design, save_design
from .evaluate import evaluate_design
from .models import ContextSet, GPModel, ModelError, build_model
from .objective import estimate_design_eig
from .stochastics import RngStream
from .trainer import TrainingError, optimize

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
RUN_COLUMNS = ("cell", "seed", "status", "final_bound", "max_bound", "log_b", "steps", "seconds", "error")


# -- setup ------------------------------------------------------------------------------
def setup_model(cfg: ExperimentConfig, for_evaluation: bool = False, base: Path | None = None):
    try:
        model, C, Cstar, extras = build_model(cfg.model.name, cfg.model.options, cfg.model.instance_seed,
                                              for_evaluation=for_evaluation)
    except TypeError as exc:
        raise ConfigError(f"model.options: {exc}") from None
    except ModelError as exc:
        raise ConfigError(f"model: {exc}") from None
    rows_c = resolve_rows(cfg.contexts.C, base)
    rows_s = resolve_rows(cfg.contexts.Cstar, base)
    if isinstance(model, GPModel) and (rows_c is not None or rows_s is not None):
        raise ConfigError("contexts: the GP model fixes its own context grids (set model.options instead)")
    try:
        if rows_c is not None:
            C = ContextSet(rows_c, kind=model.context_kind)
        if rows_s is not None:
            Cstar = ContextSet(rows_s, kind=model.context_kind)
    except ModelError as exc:
        raise ConfigError(f"contexts: {exc}") from None
    return model, C, Cstar


def _method_label(cfg: ExperimentConfig) -> str:
    if cfg.method.kind == "cobed":
        return "cobed"
    return _baseline_spec(cfg).label


def _baseline_spec(cfg: ExperimentConfig) -> BaselineSpec:
    m = cfg.method
    try:
        return BaselineSpec(m.kind, m.alpha, m.mc_samples, m.exact_moments, m.sigma, m.p)
    except ValueError as exc:
        raise ConfigError(f"method: {exc}") from None


def run_design(cfg: ExperimentConfig, out: Path):
    """Optimise (or draw a baseline) design, writing design.json, trace.csv and config.json."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    model, C, Cstar = setup_model(cfg)
    root = RngStream(cfg.seed)
    label = _method_label(cfg)
    if cfg.method.kind != "cobed":
        design = baseline_design(_baseline_spec(cfg), model, C, root.stream("baseline"))
        save_design(out / "design.json", design, model.name, label, {"seed": cfg.seed})
        return design, None
    design = make_design(model, len(C), root.stream("design_init"), cfg.train.temperature,
                         cfg.design.init, cfg.design.init_scale, C=C)
    spec = cfg.train.critic
    critic = init_critic(len(C), len(Cstar), resolve_hidden(spec.hidden, len(C)), spec.embed_dim,
                         spec.batch_norm, root.stream("critic_init"),
                         hidden_m=None if spec.hidden_m is None else resolve_hidden(spec.hidden_m, len(Cstar)))
    try:
        design, critic, trace = optimize(model, C, Cstar, design, critic, cfg.train, root)
    except TrainingError as exc:
        if exc.trace is not None:
            exc.trace.to_csv(out / "trace.csv")
        raise
    trace.to_csv(out / "trace.csv")
    save_design(out / "design.json", design, model.name, label,
                {"seed": cfg.seed, "final_bound": trace.final_bound()})
    critic.save(out / "critic.json")
    return design, trace


def run_evaluate(cfg: ExperimentConfig, design_path: Path, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    model, C, Cstar = setup_model(cfg)
    try:
        design = load_design(design_path, model.action_space, model.name)
    except (DesignError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigError(f"design: {exc}") from None
    if len(design.actions) != len(C):
        raise ConfigError(f"design: {len(design.actions)} actions for {len(C)} experimental contexts")
    source = json.loads(Path(design_path).read_text()).get("source", "design")
    eval_model = model
    if isinstance(model, GPModel):
        eval_model, _, _ = setup_model(cfg, for_evaluation=True)
    ev = cfg.evaluate
    report = evaluate_design(eval_model, design, C, Cstar, ev.environments, ev.particles, seed=cfg.seed,
                             method=source, jobs=ev.jobs)
    if ev.eig:
        est, _, _ = estimate_design_eig(model, design, C, Cstar, cfg.eig_train_config(),
                                        RngStream(cfg.seed).stream("eig_estimate"), ev.eig_batches)
        report.eig, report.eig_se = est.value, est.stderr
    report.write(out)
    return report


# -- sweeps --------------------------------------------------------------------------------
def parse_sweep(spec: dict) -> tuple[list[tuple[str, list]], list[int]]:
    """``{"parameters": {dotted.path: [values]}, "seeds": [..] | "n_seeds": n}``."""
    if not isinstance(spec, dict):
        raise ConfigError("sweep: expected an object")
    unknown = set(spec) - {"parameters", "seeds", "n_seeds"}
    if unknown:
        raise ConfigError(f"sweep.{sorted(unknown)[0]}: unknown key")
    params = spec.get("parameters")
    if not isinstance(params, dict) or not params:
        raise ConfigError("sweep.parameters: need at least one parameter grid")
    for k, v in params.items():
        if not isinstance(v, list) or not v:
            raise ConfigError(f"sweep.parameters.{k}: grid must be a non-empty list")
    if "seeds" in spec:
        seeds = spec["seeds"]
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("sweep.seeds: must be a non-empty list")
    else:
        n = spec.get("n_seeds", 1)
        if not isinstance(n, int) or n < 1:
            raise ConfigError("sweep.n_seeds: must be a positive integer")
        seeds = list(range(n))
    return list(params.items()), [int(s) for s in seeds]


def sweep_cells(grids: list[tuple[str, list]]) -> list[dict]:
    keys = [k for k, _ in grids]
    return [dict(zip(keys, combo)) for combo in itertools.product(*[v for _, v in grids])]


def _cell_name(cell: dict) -> str:
    return ",".join(f"{k}={v}" for k, v in cell.items())


def _sweep_job(args) -> dict:
    base, cell, seed, out = args
    overrides = dict(cell)
    overrides["seed"] = seed
    record = {"cell": _cell_name(cell), "seed": seed, "status": "ok", "final_bound": float("nan"),
              "max_bound": float("nan"), "log_b": float("nan"), "steps": 0, "seconds": 0.0, "error": ""}
    t0 = time.perf_counter()
    try:
        cfg = parse_config(base, overrides)
        record["log_b"] = math.log(cfg.train.batch_size)
        _, trace = run_design(cfg, Path(out))
        record["final_bound"] = trace.final_bound()
        record["max_bound"] = float(np.max(trace.bounds))
        record["steps"] = len(trace.bounds)
    except TrainingError as exc:
        record.update(status="failed", error=str(exc), steps=exc.step)
    except Exception as exc:  # noqa: BLE001 - a failing cell must not stop the sweep
        record.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    record["seconds"] = time.perf_counter() - t0
    return record


def summarize(records: list[dict]) -> list[dict]:
    """Per-cell mean and std of the final bound with +/- 2 std bands."""
    rows = []
    for cell in dict.fromkeys(r["cell"] for r in records):
        rs = [r for r in records if r["cell"] == cell]
        ok = np.array([r["final_bound"] for r in rs if r["status"] == "ok"], dtype=np.float64)
        mean = float(ok.mean()) if ok.size else float("nan")
        std = float(ok.std(ddof=1)) if ok.size > 1 else float("nan")
        rows.append({"cell": cell, "n_ok": int(ok.size), "n_failed": len(rs) - int(ok.size),
                     "mean": mean, "std": std, "lower": mean - 2 * std, "upper": mean + 2 * std})
    return rows


def _write_csv(path: Path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        w.writerows(rows)


def run_sweep(base: dict, sweep: dict, out: Path, jobs: int = 1) -> tuple[list[dict], list[dict]]:
    grids, seeds = parse_sweep(sweep)
    cells = sweep_cells(grids)
    parse_config(base)  # validate the base config once before launching anything
    for cell in cells:
        parse_config(base, cell)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(base, cell, seed, str(out / "runs" / f"cell{i}_seed{seed}"))
             for i, cell in enumerate(cells) for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            records = list(pool.map(_sweep_job, tasks))
    else:
        records = [_sweep_job(t) for t in tasks]
    summary = summarize(records)
    _write_csv(out / "runs.csv", records, RUN_COLUMNS)
    _write_csv(out / "summary.csv", summary, ("cell", "n_ok", "n_failed", "mean", "std", "lower", "upper"))
    return records, summary


# -- argument parsing ----------------------------------------------------------------------
def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.out is not None:
        out["output"] = args.out
    if args.steps is not None:
        out["train.steps"] = args.steps
    if args.batch_size is not None:
        out["train.batch_size"] = args.batch_size
    if getattr(args, "environments", None) is not None:
        out["evaluate.environments"] = args.environments
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set {item!r}: expected dotted.key=value")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctxbed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="config JSON file or preset name")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (overrides the config's output)")
        p.add_argument("--steps", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field by dotted path; VALUE is parsed as JSON if possible")

    common(sub.add_parser("design", help="optimise or draw a design"))
    p_eval = sub.add_parser("evaluate", help="score a design by simulated deployment")
    common(p_eval)
    p_eval.add_argument("--design", required=True, help="design.json produced by `ctxbed design`")
    p_eval.add_argument("--environments", type=int)
    p_sweep = sub.add_parser("sweep", help="run a grid of training configurations")
    common(p_sweep)
    p_sweep.add_argument("--sweep", required=True, help="sweep spec JSON file or preset name")
    p_sweep.add_argument("--jobs", type=int, default=1)
    sub.add_parser("presets", help="list shipped preset configs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "presets":
            print("\n".join(preset_names() + sweep_names()))
            return EXIT_OK
        overrides = _overrides(args)
        if args.command == "sweep":
            base = load_json(args.config)
            for k, v in overrides.items():
                if k != "seed":
                    set_path(base, k, v)
            out = Path(overrides.get("output", base.get("output", "runs/sweep")))
            records, summary = run_sweep(base, load_json(args.sweep), out, args.jobs)
            for row in summary:
                print(f"{row['cell']}: mean={row['mean']:.4f} std={row['std']:.4f} "
                      f"ok={row['n_ok']} failed={row['n_failed']}")
            return EXIT_OK
        cfg = parse_config(load_json(args.config), overrides)
        out = Path(cfg.output)
        if args.command == "design":
            design, trace = run_design(cfg, out)
            msg = f"design written to {out / 'design.json'}"
            if trace is not None:
                msg += f" (final bound {trace.final_bound():.4f} nats)"
            print(msg)
        else:
            report = run_evaluate(cfg, Path(args.design), out)
            print(json.dumps(report.to_json(), indent=2, sort_keys=True))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingError, ModelError, ArithmeticError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
