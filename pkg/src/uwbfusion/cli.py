"""Command-line entry point: run, sweep, check-jacobians, replay, version."""

from __future__ import annotations

import argparse
import dataclasses
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .jacobian_check import DEFAULT_TOL, check_jacobians
from .metrics import ErrorStats, compute_stats, export_trace, format_kv, read_trace, summarize, write_summary
from .simulation import run_closed_loop

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_MISSING = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uwbfusion", description="Simulate and evaluate UWB/IMU relative localization of a MAV.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="simulate one closed-loop flight")
    run.add_argument("config", help="scenario config file (INI)")
    run.add_argument("--out", default="out", help="output directory for trace.csv, summary.txt, summary.kv")
    run.add_argument("--seed", type=int, default=None, help="RNG seed (integer, overrides the config)")
    run.add_argument("--duration", type=float, default=None, help="simulated flight time in seconds (overrides the config)")

    sweep = sub.add_parser("sweep", help="run several seeds and aggregate the error statistics")
    sweep.add_argument("config", help="scenario config file (INI)")
    sweep.add_argument("--seeds", type=int, required=True, help="number of seeds (count)")
    sweep.add_argument("--first-seed", type=int, default=0, help="first seed (integer); runs use first-seed .. first-seed+N-1")
    sweep.add_argument("--duration", type=float, default=None, help="simulated flight time in seconds per run")
    sweep.add_argument("--jobs", type=int, default=1, help="parallel worker processes (count)")
    sweep.add_argument("--out", default=None, help="optional directory for sweep.kv and per-seed summaries")

    jac = sub.add_parser("check-jacobians", help="compare analytic Jacobians with finite differences")
    jac.add_argument("--trials", type=int, default=1000, help="random linearization points (count)")
    jac.add_argument("--tol", type=float, default=DEFAULT_TOL, help="relative tolerance (dimensionless)")
    jac.add_argument("--seed", type=int, default=0, help="RNG seed (integer)")

    rep = sub.add_parser("replay", help="recompute error statistics from a trace CSV")
    rep.add_argument("trace", help="trace.csv written by 'run'")
    rep.add_argument("--out", default=None, help="optional directory for summary.txt and summary.kv")

    sub.add_parser("version", help="print the package version")
    return p


def _load(path: str, seed, duration):
    cfg = load_config(path)
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if duration is not None:
        changes["duration"] = duration
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _run_extra(cfg, result) -> dict:
    acc, gated, dropped = result.diagnostics.totals()
    return {"kind": cfg.kind, "seed": cfg.seed, "duration": float(cfg.duration),
            "accepted": acc, "gated": gated, "dropped": dropped, "diverged": int(result.aborted)}


def cmd_run(args) -> int:
    cfg = _load(args.config, args.seed, args.duration)
    result = run_closed_loop(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_trace(result.trace, out / "trace.csv")
    if len(result.trace) < 2:
        print(f"error: run produced {len(result.trace)} trace samples", file=sys.stderr)
        return EXIT_FAILURE
    stats = compute_stats(result.trace)
    write_summary(stats, out, cfg.kind, _run_extra(cfg, result))
    print(summarize(stats, cfg.kind), end="")
    if result.aborted:
        print(f"error: {result.reason}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _sweep_one(cfg):
    try:
        result = run_closed_loop(cfg)
        if len(result.trace) < 2:
            return cfg.seed, None, "no trace samples"
        return cfg.seed, compute_stats(result.trace), result.reason if result.aborted else ""
    except Exception as exc:  # reported, the sweep continues
        return cfg.seed, None, f"{type(exc).__name__}: {exc}"


def aggregate(stats: list[ErrorStats]) -> dict:
    """Mean and population spread of every ErrorStats field over the runs."""
    out = {"runs": len(stats)}
    for f in dataclasses.fields(ErrorStats):
        # statistics works in exact rationals, so identical runs give zero spread.
        v = [float(getattr(s, f.name)) for s in stats]
        out[f"{f.name}_mean"] = float(statistics.mean(v))
        out[f"{f.name}_spread"] = float(statistics.pstdev(v))
    return out


def cmd_sweep(args) -> int:
    if args.seeds < 1:
        print("error: --seeds must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    base = _load(args.config, None, args.duration)
    configs = [dataclasses.replace(base, seed=args.first_seed + k) for k in range(args.seeds)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, configs))
    else:
        results = [_sweep_one(c) for c in configs]
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    good, failed = [], 0
    for seed, stats, problem in results:
        if out and stats is not None:
            extra = {"seed": seed, "failed": int(bool(problem))}
            (out / f"seed_{seed}.kv").write_text(format_kv({**stats.as_dict(), **extra}))
        if problem:
            failed += 1
            print(f"seed {seed}: FAILED ({problem})", file=sys.stderr)
        if stats is not None and not problem:
            good.append(stats)
            print(f"seed {seed}: rmse " + " ".join(f"{x:.4f}" for x in stats.rmse))
    if not good:
        print("error: every run failed", file=sys.stderr)
        return EXIT_DIVERGED
    agg = aggregate(good)
    agg["failed"] = failed
    width = max(len(k) for k in agg)
    for k, v in agg.items():
        print(f"{k:<{width}}  {v:.6g}" if isinstance(v, float) else f"{k:<{width}}  {v}")
    if out:
        (out / "sweep.kv").write_text(format_kv(agg))
    return EXIT_DIVERGED if failed else EXIT_OK


def cmd_check_jacobians(args) -> int:
    report = check_jacobians(args.trials, args.tol, args.seed)
    print("\n".join(report.lines()))
    return EXIT_OK if report.passed else EXIT_FAILURE


def cmd_replay(args) -> int:
    try:
        trace = read_trace(args.trace)
        stats = compute_stats(trace)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(summarize(stats, Path(args.trace).stem), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_summary(stats, out, Path(args.trace).stem)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "check-jacobians": cmd_check_jacobians,
    "replay": cmd_replay,
    "version": lambda args: print(__version__) or EXIT_OK,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
