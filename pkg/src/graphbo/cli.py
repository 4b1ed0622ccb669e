"""Command-line driver: pool generation, optimization runs, baselines, scaling and reports.

Run files use the CSV schema ``t,graph_id,y,best_y,t_select_ms,t_eval_ms,t_retrain_ms``
(one row per evaluation; ``t = 0`` marks the initial design).  Every run also
writes a JSON summary holding the full effective configuration and seeds.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import json
import logging
import os
import sys
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np

from .benchmarks import (
    SITUATIONS,
    SyntheticSpec,
    generate_pool,
    load_synthetic,
    loglog_slope,
    scaling_harness,
    situation_objective,
    situation_pool,
    summarize_scaling,
)
from .loop import (
    ExperimentConfig,
    RunRecord,
    SeedBundle,
    evaluations_to_reach,
    random_baseline,
    run,
    write_summary,
)

log = logging.getLogger("graphbo")

BUDGET_FRACTIONS = (0.1, 0.25, 0.5, 0.75, 1.0)
_CONFIG_KEYS = {f.name for f in fields(ExperimentConfig)}


class ConfigError(ValueError):
    pass


def parse_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment.

    Values are read as JSON when possible (numbers, booleans, lists) and as
    plain strings otherwise.  ``surrogate.<name>`` keys go into the surrogate
    overrides.
    """
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        out[key] = parsed
    return out


def build_config(file_values: dict, overrides: dict) -> ExperimentConfig:
    """Merge config-file values with command-line overrides (flags win)."""
    merged = {**file_values, **{k: v for k, v in overrides.items() if v is not None}}
    kwargs: dict = {"surrogate": dict(merged.pop("surrogate", {}) or {})}
    for key, value in merged.items():
        if key.startswith("surrogate."):
            kwargs["surrogate"][key.split(".", 1)[1]] = value
        elif key in _CONFIG_KEYS:
            kwargs[key] = value
        elif key not in ("situation", "repeats", "pool", "out"):
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_seed_bundle(text: str | None) -> SeedBundle | None:
    """``"7"`` derives all four seeds from 7; ``"1,2,3,4"`` gives pool, net, mcmc, selection."""
    if text is None:
        return None
    parts = [int(p) for p in str(text).split(",")]
    if len(parts) == 1:
        return SeedBundle.from_base(parts[0])
    if len(parts) == 4:
        return SeedBundle(*parts)
    raise ConfigError("--seed-bundle takes one integer or four comma-separated integers")


def repeat_seeds(bundle: SeedBundle, k: int) -> SeedBundle:
    off = 1000 * k
    return SeedBundle(bundle.pool + off, bundle.net + off, bundle.mcmc + off, bundle.selection + off)


def max_workers(n_jobs: int) -> int:
    cap = os.environ.get("GRAPHBO_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n_jobs, limit))


def _true_optimum(pool_path: Path, synth) -> tuple[int, float]:
    from .benchmarks import sidecar_path

    side = sidecar_path(pool_path)
    if side.exists():
        meta = json.loads(side.read_text()).get("true_optimum")
        if meta:
            return int(meta["id"]), float(meta["y"])
    return synth.objective().optimum()


def _padded(trajectories: list[np.ndarray]) -> np.ndarray:
    """Stack incumbent curves, carrying each one's last value forward."""
    n = max(len(t) for t in trajectories)
    return np.array([np.concatenate([t, np.full(n - len(t), t[-1])]) for t in trajectories])


def aggregate(records: list[RunRecord], optimum_y: float | None) -> dict:
    curves = _padded([r.trajectory for r in records])
    hits = [evaluations_to_reach(r, optimum_y) if optimum_y is not None else None for r in records]
    reached = [h for h in hits if h is not None]
    return {
        "repeats": len(records),
        "mean_best_y": curves.mean(axis=0).tolist(),
        "std_best_y": curves.std(axis=0).tolist(),
        "final_best_y": [float(c[-1]) for c in curves],
        "evaluations_to_optimum": hits,
        "evaluations_to_optimum_mean": float(np.mean(reached)) if reached else None,
        "evaluations_to_optimum_std": float(np.std(reached)) if reached else None,
        "reached": len(reached),
    }


def write_curve(path: Path, agg: dict) -> None:
    """Whitespace-separated ``evaluation mean std`` columns for gnuplot."""
    lines = ["# evaluation mean_best_y std_best_y"]
    for i, (m, s) in enumerate(zip(agg["mean_best_y"], agg["std_best_y"]), start=1):
        lines.append(f"{i} {m!r} {s!r}")
    path.write_text("\n".join(lines) + "\n")


# --- subcommands --------------------------------------------------------

def cmd_gen_pool(args) -> int:
    spec = SyntheticSpec(size=args.size, seed=args.seed,
                         n_range=(args.n_min, args.n_max), p_range=(args.p_min, args.p_max))
    if spec.size < ExperimentConfig().n_init + 1:
        warnings.warn(f"pool of {spec.size} graphs is smaller than n_init+1 = "
                      f"{ExperimentConfig().n_init + 1} required by default runs", UserWarning)
    synth = generate_pool(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    synth.write(out)
    meta = synth.sidecar()
    print(f"wrote {len(synth.pool)} graphs to {out}")
    print(f"avg |V| = {meta['avg_nodes']:.2f}  avg |E| = {meta['avg_edges']:.2f}")
    print(f"true optimum: graph {meta['true_optimum']['id']}  y = {meta['true_optimum']['y']!r}")
    return 0


def _one_run(pool_path: str, situation: str, cfg_dict: dict, out_csv: str, out_json: str,
             optimum_y: float | None) -> str:
    synth = load_synthetic(pool_path)
    cfg = ExperimentConfig(**cfg_dict)
    rec = run(situation_objective(synth, situation), situation_pool(synth, situation), cfg)
    rec.write_csv(out_csv)
    write_summary(out_json, rec, {
        "pool": str(pool_path), "situation": situation,
        "evaluations_to_optimum": evaluations_to_reach(rec, optimum_y) if optimum_y is not None else None,
        "true_optimum_y": optimum_y,
    })
    return out_csv


def cmd_run(args) -> int:
    if args.situation not in SITUATIONS:
        raise ConfigError(f"unknown situation {args.situation!r}")
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {
        "max_iter": args.max_iter, "n_init": args.n_init, "retrain_every": args.retrain_every,
        "n_samples": args.samples, "initial_epochs": args.initial_epochs,
        "retrain_epochs": args.retrain_epochs, "candidate_budget": args.candidate_budget,
    }
    base = build_config(file_values, overrides)
    bundle = parse_seed_bundle(args.seed_bundle) or base.seeds
    pool_path = Path(args.pool)
    synth = load_synthetic(pool_path)
    if len(synth.pool) < base.n_init + 1:
        raise ConfigError(f"pool of {len(synth.pool)} graphs needs at least n_init+1 = {base.n_init + 1}")
    _, opt_y = _true_optimum(pool_path, synth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for k in range(args.repeats):
        cfg = base.to_dict() | {"seeds": vars(repeat_seeds(bundle, k))}
        jobs.append((str(pool_path), args.situation, cfg,
                     str(out / f"run_{k}.csv"), str(out / f"run_{k}.json"), opt_y))
    done = _execute(_one_run, jobs)
    records = [RunRecord.read_csv(p) for p in done]
    agg = aggregate(records, opt_y) if records else {}
    agg.update({"config": base.to_dict(), "seed_bundle": vars(bundle), "situation": args.situation,
                "pool": str(pool_path), "true_optimum_y": opt_y, "completed": len(records),
                "requested": args.repeats, "method": "dgbo"})
    (out / "aggregate.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n")
    if records:
        write_curve(out / "curve.dat", agg)
    print(f"{len(records)}/{args.repeats} repeats completed; outputs in {out}")
    return 0 if len(records) == args.repeats else 1


def _execute(fn, jobs: list[tuple]) -> list:
    """Run jobs serially or in worker processes; failed jobs are logged and skipped."""
    results = []
    workers = max_workers(len(jobs))
    if workers == 1:
        for job in jobs:
            try:
                results.append(fn(*job))
            except Exception as exc:  # keep other repeats going
                log.error("repeat failed: %s", exc)
        return results
    with cf.ProcessPoolExecutor(max_workers=workers) as ex:
        futures = [ex.submit(fn, *job) for job in jobs]
        for fut in futures:
            try:
                results.append(fut.result())
            except Exception as exc:
                log.error("repeat failed: %s", exc)
    return results


def cmd_baseline(args) -> int:
    pool_path = Path(args.pool)
    synth = load_synthetic(pool_path)
    budget = args.budget or len(synth.pool)
    _, opt_y = _true_optimum(pool_path, synth)
    objective = synth.objective()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for k in range(args.repeats):
        rec = random_baseline(objective, synth.pool, budget, args.seed + k)
        rec.write_csv(out / f"run_{k}.csv")
        write_summary(out / f"run_{k}.json", rec, {
            "pool": str(pool_path), "true_optimum_y": opt_y,
            "evaluations_to_optimum": evaluations_to_reach(rec, opt_y),
        })
        records.append(rec)
    agg = aggregate(records, opt_y)
    agg.update({"config": {"budget": budget, "seed": args.seed, "repeats": args.repeats},
                "pool": str(pool_path), "true_optimum_y": opt_y, "completed": len(records),
                "requested": args.repeats, "method": "random"})
    (out / "aggregate.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n")
    write_curve(out / "curve.dat", agg)
    print(f"{len(records)} baseline repeats; best y = {max(r.best_y for r in records)!r}")
    return 0


SCALING_COLUMNS = ("n", "iteration", "t_select_ms", "t_retrain_ms", "total_ms", "t_gp_ms")


def cmd_scaling(args) -> int:
    file_values = parse_config_file(args.config) if args.config else {}
    cfg = build_config(file_values, {"initial_epochs": args.initial_epochs,
                                     "retrain_epochs": args.retrain_epochs})
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = scaling_harness(sizes, cfg, iterations=args.iterations, seed=args.seed,
                           gp_reference=not args.no_gp)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCALING_COLUMNS)
        for r in rows:
            w.writerow([r.n, r.iteration, f"{r.t_select_ms:.3f}", f"{r.t_retrain_ms:.3f}",
                        f"{r.total_ms:.3f}", f"{r.t_gp_ms:.3f}"])
    summary = summarize_scaling(rows) | {"config": cfg.to_dict(), "sizes": sizes,
                                         "iterations": args.iterations}
    out.with_suffix(".json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"log-log slope (select + update): {summary['slope']:.3f}")
    if "gp_slope" in summary:
        print(f"log-log slope (dense predictor): {summary['gp_slope']:.3f}")
    return 0


def read_scaling_csv(path: str | Path) -> dict:
    """Mean total time per N and the fitted slope, recomputed from a scaling CSV."""
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    ns = sorted({int(r["n"]) for r in rows})
    mean = [float(np.mean([float(r["total_ms"]) for r in rows if int(r["n"]) == n])) for n in ns]
    return {"n": ns, "mean_total_ms": mean, "slope": loglog_slope(ns, mean)}


def cmd_report(args) -> int:
    runs = Path(args.runs)
    csvs = sorted(runs.glob("run_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not csvs:
        raise ConfigError(f"no run_*.csv files in {runs}")
    records = [RunRecord.read_csv(p) for p in csvs]
    opt_y = None
    for p in csvs:
        side = p.with_suffix(".json")
        if side.exists():
            opt_y = json.loads(side.read_text()).get("true_optimum_y")
            if opt_y is not None:
                break
    if opt_y is None:
        opt_y = max(r.best_y for r in records)
    agg = aggregate(records, opt_y)
    budget = len(agg["mean_best_y"])
    curves = _padded([r.trajectory for r in records])
    pct = []
    for frac in BUDGET_FRACTIONS:
        b = max(1, int(round(frac * budget)))
        col = curves[:, b - 1]
        pct.append({"fraction": frac, "evaluations": b, "mean_best_y": float(col.mean()),
                    "std_best_y": float(col.std()),
                    "reached": int(sum(h is not None and h <= b for h in agg["evaluations_to_optimum"]))})
    hits = [h for h in agg["evaluations_to_optimum"] if h is not None]
    report = {"runs": [p.name for p in csvs], "true_optimum_y": opt_y,
              "evaluations_to_optimum": agg["evaluations_to_optimum"],
              "evaluations_to_optimum_mean": float(np.mean(hits)) if hits else None,
              "evaluations_to_optimum_std": float(np.std(hits)) if hits else None,
              "budget_table": pct}
    (runs / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with open(runs / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["evaluation", "mean_best_y", "std_best_y"])
        for i, (m, s) in enumerate(zip(agg["mean_best_y"], agg["std_best_y"]), start=1):
            w.writerow([i, repr(m), repr(s)])
    print(f"runs: {len(records)}   optimum y: {opt_y!r}")
    if hits:
        print(f"evaluations to optimum: {np.mean(hits):.1f} +/- {np.std(hits):.1f} "
              f"({len(hits)}/{len(records)} reached)")
    else:
        print(f"evaluations to optimum: not reached (0/{len(records)})")
    print("fraction  evals  mean_best_y  std_best_y  reached")
    for row in pct:
        print(f"{row['fraction']:>8.2f}  {row['evaluations']:>5d}  {row['mean_best_y']:>11.5f}  "
              f"{row['std_best_y']:>10.5f}  {row['reached']:>7d}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphbo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-pool", help="generate a synthetic random-graph pool")
    g.add_argument("--size", type=int, default=500)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-min", type=int, default=20)
    g.add_argument("--n-max", type=int, default=60)
    g.add_argument("--p-min", type=float, default=0.10)
    g.add_argument("--p-max", type=float, default=0.26)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_pool)

    r = sub.add_parser("run", help="run the optimizer on a pool")
    r.add_argument("--pool", required=True)
    r.add_argument("--situation", default="a")
    r.add_argument("--config")
    r.add_argument("--max-iter", type=int)
    r.add_argument("--n-init", type=int)
    r.add_argument("--retrain-every", type=int)
    r.add_argument("--samples", type=int)
    r.add_argument("--initial-epochs", type=int)
    r.add_argument("--retrain-epochs", type=int)
    r.add_argument("--candidate-budget", type=int)
    r.add_argument("--seed-bundle")
    r.add_argument("--repeats", type=int, default=1)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("baseline", help="uniform random selection")
    b.add_argument("--pool", required=True)
    b.add_argument("--budget", type=int)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_baseline)

    s = sub.add_parser("scaling", help="per-iteration cost against observation count")
    s.add_argument("--sizes", default="100,200,400,800")
    s.add_argument("--iterations", type=int, default=20)
    s.add_argument("--initial-epochs", type=int)
    s.add_argument("--retrain-epochs", type=int)
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-gp", action="store_true", help="skip the dense reference predictor")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scaling)

    rp = sub.add_parser("report", help="summarize a directory of run CSVs")
    rp.add_argument("--runs", required=True)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
