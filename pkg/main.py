#!/usr/bin/env python3
"""
Aalen FIC - Main entry point.

Fits Aalen's additive hazard model, ranks covariate subsets with the focussed
information criterion, simulates censored data and evaluates exact risks.

Usage:
    python main.py fit data.csv [--subset 1,3] [--tau 5]
    python main.py fic data.csv --x 1,2 --t 3 [--candidates all]
    python main.py fic data.csv --x 1,2 --t1 1 --t2 3
    python main.py fic data.csv --weights weights.json
    python main.py simulate sim.json --out data.csv
    python main.py oracle oracle.json --n 100,1000 [--candidates all]
    python main.py replicate sim.json --subset 1 --x 1,1 --t 1 --reps 500
    python main.py history           # Show recent runs

Exit codes: 0 success, 2 invalid input, 3 numerical singularity,
4 every candidate infeasible.
"""

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

# Load environment variables from .env file
from dotenv import load_dotenv
load_dotenv()

import numpy as np

from src.aalen import IndexSet, SingularityError, fit_full, fit_submodel
from src.config_loader import Config, load_config
from src.data_model import DatasetError, load_dataset_file
from src.database import RunDatabase, RunManifest
from src.oracle import OracleConfig, QuadratureError, exact_risk, oracle_sweep
from src.risk import (
    AllCandidatesInfeasibleError,
    FicReport,
    IntervalFocus,
    PointFocus,
    enumerate_candidates,
    gliding_window,
    load_weight_spec,
    rank_models,
)
from src.simulator import (
    SimConfig,
    TooManySingularReplicationsError,
    replicate_mse,
    simulate_dataset,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SINGULAR = 3
EXIT_INFEASIBLE = 4


def parse_vector(text: str) -> tuple[float, ...]:
    """Comma-separated reals."""
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as e:
        raise ValueError(f"invalid vector '{text}': {e}") from e


def parse_candidates(text: str, r: int, protected: str | None, max_r: int) -> list[IndexSet]:
    """'all', or index sets separated by ';' such as '1;1,2'."""
    if text.strip().lower() == "all":
        kept = [int(j) for j in protected.split(",")] if protected else []
        return enumerate_candidates(r, kept, max_r=max_r)
    return [IndexSet.parse(part, r) for part in text.split(";") if part.strip()]


def write_json(path: Path, manifest: RunManifest, payload: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"manifest": manifest.to_dict(), **payload}, indent=2))


def write_csv(path: Path, manifest: RunManifest, header: list[str], rows: list[list]):
    buffer = io.StringIO()
    for line in manifest.header_lines():
        buffer.write(f"# {line}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buffer.getvalue())


def default_out(config: Config, name: str) -> Path:
    return Path(config.output_dir) / name


def format_report(report: FicReport) -> str:
    """Format a ranked FIC report for terminal output."""
    lines = []
    lines.append(f"\n{'='*80}")
    lines.append(f"FIC RANKING  focus: {json.dumps(report.focal)}")
    lines.append(f"{'='*80}")
    lines.append(f"{'rank':>4}  {'I':<16}{'sqb_hat':>16}{'var_hat':>16}{'score':>16}")
    for rank, result in enumerate(report.ranked, start=1):
        marker = "  (negative var_hat)" if result.negative_variance else ""
        lines.append(
            f"{rank:>4}  {result.index_set.label:<16}"
            f"{result.sqb_hat:>16.6g}{result.var_hat:>16.6g}{result.score:>16.6g}{marker}"
        )
    for result in report.infeasible:
        lines.append(f"{'-':>4}  {result.index_set.label:<16}  infeasible: {result.reason}")
    winner = report.winner.label if report.winner else "none"
    lines.append(f"\nSelected model: {winner}")
    return "\n".join(lines)


def cmd_fit(args, config: Config, manifest: RunManifest) -> int:
    d = load_dataset_file(args.data)
    if args.subset:
        est = fit_submodel(d, IndexSet.parse(args.subset, d.r), args.tau, config.rcond_threshold)
    else:
        est = fit_full(d, args.tau, config.rcond_threshold)

    print("\n" + "="*80)
    print(f"AALEN ESTIMATE  I = {est.index_set.label}  (n = {d.n}, r = {d.r})")
    print("="*80)
    cols = [f"dA{j}" for j in est.index_set.indices]
    print(f"{'time':>12}" + "".join(f"{c:>14}" for c in cols) + "".join(f"{'A' + c[2:]:>14}" for c in cols))
    cumulative = np.cumsum(est.increments, axis=0)
    for u, inc, cum in zip(est.grid.times, est.increments, cumulative):
        print(f"{u:>12.6g}" + "".join(f"{v:>14.6g}" for v in inc) + "".join(f"{v:>14.6g}" for v in cum))
    if len(est.grid) == 0:
        print("  (no observed events: empty event grid)")

    out = Path(args.out) if args.out else default_out(config, "fit.json")
    manifest.outputs.append(str(out))
    write_json(out, manifest, {"estimate": est.to_dict()})
    print(f"\nWrote {out}")
    return EXIT_OK


def cmd_fic(args, config: Config, manifest: RunManifest) -> int:
    d = load_dataset_file(args.data)
    candidates = parse_candidates(args.candidates, d.r, args.protected, config.max_all_candidates_r)
    out = Path(args.out) if args.out else default_out(config, "fic.json")
    manifest.outputs.append(str(out))

    if args.t2 is not None and args.t1 is None:
        raise ValueError("--t2 needs --t1")
    if args.weights and (args.t is not None or args.t1 is not None):
        raise ValueError("--weights carries its own horizons; drop --t/--t1/--t2")

    if args.centers:
        if args.x is None or args.delta is None:
            raise ValueError("--centers needs --x and --delta")
        reports = gliding_window(
            d, candidates, parse_vector(args.x), parse_vector(args.centers), args.delta,
            config.rcond_threshold,
        )
        for report in reports:
            print(format_report(report))
        write_json(out, manifest, {"windows": [report.to_dict() for report in reports]})
        print(f"\nWrote {out}")
        return EXIT_OK

    if args.weights:
        focal = load_weight_spec(args.weights)
        manifest.config_paths.append(args.weights)
    else:
        if args.x is None:
            raise ValueError("--x is required unless --weights is given")
        x = parse_vector(args.x)
        if args.t is not None:
            focal = PointFocus(x, args.t)
        elif args.t1 is not None:
            if args.t2 is None:
                raise ValueError("--t1 needs --t2")
            focal = IntervalFocus(x, args.t1, args.t2)
        else:
            raise ValueError("give --t, or both --t1 and --t2")

    try:
        report = rank_models(d, candidates, focal, config.rcond_threshold)
    except AllCandidatesInfeasibleError as e:
        print(format_report(e.report))
        write_json(out, manifest, e.report.to_dict())
        raise

    print(format_report(report))
    write_json(out, manifest, report.to_dict())
    print(f"\nWrote {out}")
    return EXIT_OK


def cmd_simulate(args, config: Config, manifest: RunManifest) -> int:
    raw = json.loads(Path(args.sim).read_text())
    if args.n is not None:
        raw["n"] = args.n
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = SimConfig.from_dict(raw)
    manifest.seed = cfg.seed

    d = simulate_dataset(cfg)
    out = Path(args.out) if args.out else default_out(config, "simulated.csv")
    manifest.outputs.append(str(out))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(d.to_csv(manifest.header_lines()))

    observed = int(d.events.sum())
    print(f"Simulated n={d.n}, r={d.r}: {observed} events, {d.n - observed} censored")
    print(f"Wrote {out}")
    return EXIT_OK


def cmd_oracle(args, config: Config, manifest: RunManifest) -> int:
    cfg = OracleConfig.load(args.oracle)
    candidates = parse_candidates(args.candidates, cfg.r, args.protected, config.max_all_candidates_r)
    ns = [int(v) for v in parse_vector(args.n)]
    rows = oracle_sweep(cfg, candidates, ns, **config.quad_options())

    print("\n" + "="*80)
    print(f"EXACT RISK  x = {list(cfg.x)}, t = {cfg.t}")
    print("="*80)
    print(f"{'n':>8}  {'I':<16}{'sqb':>16}{'var':>16}{'mse':>16}")
    for row in rows:
        star = " *" if row.best else ""
        print(f"{row.n:>8}  {row.index_set.label:<16}{row.sqb:>16.6g}{row.var:>16.6g}{row.mse:>16.6g}{star}")

    out = Path(args.out) if args.out else default_out(config, "oracle.csv")
    manifest.outputs.append(str(out))
    config_id = Path(args.oracle).stem
    write_csv(
        out, manifest,
        ["config", "n", "I", "sqb", "var", "mse", "best"],
        [[config_id] + row.to_row() for row in rows],
    )
    print(f"\nWrote {out}")
    return EXIT_OK


def cmd_replicate(args, config: Config, manifest: RunManifest) -> int:
    raw = json.loads(Path(args.sim).read_text())
    if args.n is not None:
        raw["n"] = args.n
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = SimConfig.from_dict(raw)
    manifest.seed = cfg.seed
    I = IndexSet.parse(args.subset, cfg.r)
    x = parse_vector(args.x)
    reps = args.reps or config.default_reps
    workers = args.workers or config.workers

    print(f"Running {reps} replications at n={cfg.n} (workers={workers})...")
    mc = replicate_mse(
        cfg, I, x, args.t, reps,
        workers=workers,
        max_singular_fraction=config.max_singular_fraction,
        rcond=config.rcond_threshold,
        verbose=True,
    )
    payload = {"I": list(I.indices), "x": list(x), "t": args.t, "n": cfg.n, "monte_carlo": mc.to_dict()}
    print(f"Monte Carlo n*E(H_hat - H)^2: {mc.mean:.6g} (SE {mc.se:.3g}, {mc.used} used, {mc.singular} singular)")

    if cfg.covariates is not None and cfg.regressors.is_constant:
        truth = OracleConfig(cfg.covariates, cfg.regressors, cfg.censoring, x, args.t)
        risk = exact_risk(truth, I, cfg.n, **config.quad_options())
        z = (mc.mean - risk.mse) / mc.se if mc.se > 0 else float("nan")
        print(f"Exact risk: sqb={risk.sqb:.6g}, var={risk.var:.6g}, mse={risk.mse:.6g}")
        print(f"Difference in Monte Carlo SE: {z:+.2f}")
        payload["exact"] = {"sqb": risk.sqb, "var": risk.var, "mse": risk.mse, "z": z}
    else:
        print("Warning: exact risk needs gamma covariates and constant regressors; skipped")

    out = Path(args.out) if args.out else default_out(config, "replicate.json")
    manifest.outputs.append(str(out))
    write_json(out, manifest, payload)
    print(f"\nWrote {out}")
    return EXIT_OK


def show_history(db: RunDatabase, limit: int = 10):
    """Display run log statistics and recent runs."""
    stats = db.get_stats()
    print("\n" + "="*80)
    print("RUN HISTORY")
    print("="*80)
    print(f"Total runs: {stats['total_runs']}")
    print("By command:")
    for command, count in stats.get("by_command", {}).items():
        print(f"  - {command}: {count}")
    print(f"Failed runs: {stats['failed_runs']}")

    runs = db.get_runs(limit=limit)
    if runs:
        print("\nRecent runs:")
        for run in runs:
            took = f"{run.wall_clock:.2f}s" if run.wall_clock is not None else "-"
            outputs = ", ".join(run.manifest.get("outputs", []))
            print(f"  {run.run_date[:16]}: {run.command:<10} exit {run.exit_code}  {took}  {outputs}")


COMMANDS = {
    "fit": cmd_fit,
    "fic": cmd_fic,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
    "replicate": cmd_replicate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Aalen FIC - additive hazard regression with focussed model selection"
    )
    parser.add_argument(
        "--config",
        type=str,
        default=None,
        help="Path to config.yaml (default: config/config.yaml)",
    )
    parser.add_argument(
        "--db",
        type=str,
        default=None,
        help="Path to run log database (default: settings.db_path)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="Fit the full or a submodel Aalen estimator")
    fit.add_argument("data", help="CSV (time,status,x1..xr) or JSON dataset")
    fit.add_argument("--tau", type=float, default=None, help="Upper end of the event grid")
    fit.add_argument("--subset", type=str, default=None, help="Index set, e.g. 1,3 (default: full)")
    fit.add_argument("--out", type=str, default=None, help="JSON output path")

    fic = sub.add_parser("fic", help="Rank candidate models by FIC or wFIC")
    fic.add_argument("data", help="CSV (time,status,x1..xr) or JSON dataset")
    focus = fic.add_mutually_exclusive_group()
    focus.add_argument("--x", type=str, default=None, help="Focal covariate vector, e.g. 1,2")
    focus.add_argument("--weights", type=str, default=None, help="Weight specification JSON for wFIC")
    horizon = fic.add_mutually_exclusive_group()
    horizon.add_argument("--t", type=float, default=None, help="Focal horizon [0, t]")
    horizon.add_argument("--t1", type=float, default=None, help="Window start (t1, t2]")
    horizon.add_argument("--centers", type=str, default=None, help="Gliding window centers, e.g. 1,2,3")
    fic.add_argument("--t2", type=float, default=None, help="Window end (t1, t2]")
    fic.add_argument("--delta", type=float, default=None, help="Gliding window half-width")
    fic.add_argument("--candidates", type=str, default="all", help="'all' or sets like '1;1,2'")
    fic.add_argument("--protected", type=str, default=None, help="Covariates every candidate keeps")
    fic.add_argument("--out", type=str, default=None, help="JSON output path")

    simulate = sub.add_parser("simulate", help="Simulate a censored dataset")
    simulate.add_argument("sim", help="Simulation config JSON")
    simulate.add_argument("--n", type=int, default=None, help="Override sample size")
    simulate.add_argument("--seed", type=int, default=None, help="Override seed")
    simulate.add_argument("--out", type=str, default=None, help="CSV output path")

    oracle = sub.add_parser("oracle", help="Exact risk sweep over sample sizes")
    oracle.add_argument("oracle", help="Oracle config JSON")
    oracle.add_argument("--n", type=str, required=True, help="Sample sizes, e.g. 100,1000")
    oracle.add_argument("--candidates", type=str, default="all", help="'all' or sets like '1;1,2'")
    oracle.add_argument("--protected", type=str, default=None, help="Covariates every candidate keeps")
    oracle.add_argument("--out", type=str, default=None, help="CSV output path")

    replicate = sub.add_parser("replicate", help="Monte Carlo mse versus exact risk")
    replicate.add_argument("sim", help="Simulation config JSON")
    replicate.add_argument("--subset", type=str, default="full", help="Index set (default: full)")
    replicate.add_argument("--x", type=str, required=True, help="Focal covariate vector")
    replicate.add_argument("--t", type=float, required=True, help="Focal horizon")
    replicate.add_argument("--reps", type=int, default=None, help="Replications (default: config)")
    replicate.add_argument("--workers", type=int, default=None, help="Worker processes")
    replicate.add_argument("--n", type=int, default=None, help="Override sample size")
    replicate.add_argument("--seed", type=int, default=None, help="Override seed")
    replicate.add_argument("--out", type=str, default=None, help="JSON output path")

    history = sub.add_parser("history", help="Show the run log")
    history.add_argument("--limit", type=int, default=10, help="Number of runs to list")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
    except (FileNotFoundError, ValueError) as e:
        print(f"Error: {e}")
        print("Create a config file at config/config.yaml or specify --config")
        return EXIT_INVALID

    db = RunDatabase(args.db or config.db_path)

    if args.command == "history":
        show_history(db, args.limit)
        return EXIT_OK

    manifest = RunManifest(command=args.command)
    for name in ("data", "sim", "oracle"):
        if getattr(args, name, None):
            manifest.config_paths.append(getattr(args, name))

    start = time.perf_counter()
    try:
        code = COMMANDS[args.command](args, config, manifest)
    except AllCandidatesInfeasibleError as e:
        print(f"Error: {e}")
        code = EXIT_INFEASIBLE
    except (SingularityError, QuadratureError, TooManySingularReplicationsError) as e:
        print(f"Error: {e}")
        code = EXIT_SINGULAR
    except (DatasetError, FileNotFoundError, ValueError) as e:
        print(f"Error: {e}")
        code = EXIT_INVALID
    manifest.wall_clock = time.perf_counter() - start

    run_id = db.record_run(manifest, exit_code=code)
    print(f"Recorded run #{run_id}")
    return code


if __name__ == "__main__":
    sys.exit(main())
