"""Command-line front end: run episodes, recompute metrics offline, sweep the
cone parameter, and emit builtin scenarios.

Exit codes: 0 success, 2 unusable input (arguments, scenario or trajectory
files), 3 runtime failure, 4 safety-check failure under --check.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .sim import (
    BUILTIN_SCENARIOS,
    CSV_FORMAT,
    METHODS,
    GroupSpec,
    RecordError,
    Scenario,
    ScenarioError,
    TrajectoryRecord,
    builtin_scenario,
    compute_metrics,
    metric_r_dev,
    metric_t_cal,
    run_episode,
    scenario_from_dict,
    scenario_to_dict,
)

MANIFEST_FORMAT = "run-manifest-v1"
DEFAULT_SWEEP_VALUES = (0.1, 0.2, 0.35, 0.5, 1.0)
OUT_DIR_ENV = "FLOCKGRF_OUT_DIR"


@dataclass
class RunConfig:
    """Everything one `run` invocation needs besides the scenario itself."""

    scenario: str
    method: str = "heuristic"
    seed: int = 0
    outdir: str | None = None
    duration: float | None = None
    belief_trace: bool = False
    threads: int = 1
    strip_timing: bool = False
    check: bool = False


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise ScenarioError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path} is not valid JSON: {e}") from e


def resolve_scenario(spec: str, seed: int) -> tuple[Scenario, dict | None]:
    """A builtin name, a scenario file, or a manifest file (whose embedded
    scenario and settings are reused). Returns (scenario, manifest or None)."""
    if spec in BUILTIN_SCENARIOS:
        return builtin_scenario(spec, seed), None
    if not os.path.exists(spec):
        raise ScenarioError(f"{spec!r} is neither a builtin scenario "
                            f"({', '.join(sorted(BUILTIN_SCENARIOS))}) nor a file")
    data = _load_json(spec)
    fmt = data.get("format") if isinstance(data, dict) else None
    if fmt == MANIFEST_FORMAT:
        return scenario_from_dict(data.get("scenario", {})), data
    return scenario_from_dict(data), None


def default_outdir(explicit: str | None) -> str:
    return explicit or os.environ.get(OUT_DIR_ENV) or "out"


def write_manifest(path: str, scenario: Scenario, cfg: RunConfig,
                   duration: float) -> None:
    doc = {
        "format": MANIFEST_FORMAT,
        "csv_format": CSV_FORMAT,
        "method": cfg.method,
        "seed": int(cfg.seed),
        "duration": float(duration),
        "threads": int(cfg.threads),
        "strip_timing": bool(cfg.strip_timing),
        "belief_trace": bool(cfg.belief_trace),
        "scenario": scenario_to_dict(scenario),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def execute_run(scenario: Scenario, cfg: RunConfig) -> int:
    outdir = default_outdir(cfg.outdir)
    os.makedirs(outdir, exist_ok=True)
    duration = cfg.duration if cfg.duration is not None else scenario.duration

    trace_fh = None
    trace_path = os.path.join(outdir, "belief_trace.txt")
    try:
        if cfg.belief_trace:
            trace_fh = open(trace_path, "w")
        record, safety = run_episode(scenario, method=cfg.method,
                                     duration=duration, threads=cfg.threads,
                                     trace_sink=trace_fh)
    finally:
        if trace_fh is not None:
            trace_fh.close()

    csv_path = os.path.join(outdir, "trajectory.csv")
    record.to_csv(csv_path, strip_timing=cfg.strip_timing)
    report = compute_metrics(record, scenario)
    metrics_path = os.path.join(outdir, "metrics.txt")
    with open(metrics_path, "w") as fh:
        fh.write(report.to_text())
    manifest_path = os.path.join(outdir, "manifest.json")
    write_manifest(manifest_path, scenario, cfg, duration)

    print(f"wrote {csv_path} ({record.n_ticks} ticks x {record.n_robots} robots)")
    print(f"wrote {metrics_path}")
    print(f"wrote {manifest_path}")
    if cfg.belief_trace:
        print(f"wrote {trace_path}")
    print(f"violations={safety.count} r_dev_avg={report.r_dev_avg:.6f} "
          f"t_cal_avg={report.t_cal_avg:.6f}")
    if cfg.check and safety.count > 0:
        print(f"safety check failed: {safety.count} violation(s)", file=sys.stderr)
        return 4
    return 0


def cmd_run(args) -> int:
    scenario, manifest = resolve_scenario(
        args.scenario, args.seed if args.seed is not None else 0)
    if manifest is not None:
        # command-line flags override the recorded settings
        method = args.method or manifest.get("method", "heuristic")
        seed = args.seed if args.seed is not None else int(manifest.get("seed", 0))
        duration = args.duration if args.duration is not None \
            else manifest.get("duration")
        threads = args.threads if args.threads is not None \
            else int(manifest.get("threads", 1))
        belief_trace = args.belief_trace or bool(manifest.get("belief_trace", False))
        strip_timing = args.strip_timing or bool(manifest.get("strip_timing", False))
    else:
        method = args.method or "heuristic"
        seed = args.seed if args.seed is not None else 0
        duration = args.duration
        threads = args.threads if args.threads is not None else 1
        belief_trace = args.belief_trace
        strip_timing = args.strip_timing
    cfg = RunConfig(scenario=args.scenario, method=method, seed=seed,
                    outdir=args.out, duration=duration,
                    belief_trace=belief_trace, threads=threads,
                    strip_timing=strip_timing, check=args.check)
    return execute_run(scenario, cfg)


def cmd_metrics(args) -> int:
    if not os.path.exists(args.csv):
        raise RecordError(f"no such trajectory file: {args.csv!r}")
    record = TrajectoryRecord.from_csv(args.csv)
    scenario = None
    if args.manifest:
        data = _load_json(args.manifest)
        fmt = data.get("format") if isinstance(data, dict) else None
        if fmt == MANIFEST_FORMAT:
            scenario = scenario_from_dict(data.get("scenario", {}))
        else:
            scenario = scenario_from_dict(data)
    report = compute_metrics(record, scenario)
    sys.stdout.write(report.to_text())
    return 0


def with_k_u(scenario: Scenario, k_u: float) -> Scenario:
    groups = tuple(GroupSpec(g.states, g.reference,
                             g.bundle.with_controller(k_u=k_u))
                   for g in scenario.groups)
    return replace(scenario, groups=groups)


def sweep_table(scenario: Scenario, values, duration: float | None = None,
                threads: int = 1, parallel: bool = False) -> list[dict]:
    """One heuristic episode per cone half-width value; returns one row per
    value with the candidate-count and timing/tracking averages."""
    vals = [float(v) for v in values]
    for v in vals:
        if not (0.0 < v <= 1.0):
            raise ScenarioError(f"k_u values must lie in (0, 1], got {v}")

    def one(v: float) -> dict:
        record, _ = run_episode(with_k_u(scenario, v), method="heuristic",
                                duration=duration, threads=threads)
        _, r_dev_avg = metric_r_dev(record, with_k_u(scenario, v))
        return {
            "k_u": v,
            "mean_candidates": float(np.mean(record.n_cand)),
            "t_cal_avg": metric_t_cal(record),
            "r_dev_avg": r_dev_avg,
        }

    if parallel and len(vals) > 1:
        with ThreadPoolExecutor(max_workers=len(vals)) as ex:
            return list(ex.map(one, vals))
    return [one(v) for v in vals]


def format_sweep(rows: list[dict]) -> str:
    lines = [f"{'k_u':>6}  {'mean_candidates':>16}  {'t_cal_avg_s':>12}  {'r_dev_avg_m':>12}"]
    for r in rows:
        lines.append(f"{r['k_u']:>6.3f}  {r['mean_candidates']:>16.3f}  "
                     f"{r['t_cal_avg']:>12.6f}  {r['r_dev_avg']:>12.6f}")
    return "\n".join(lines) + "\n"


def cmd_sweep(args) -> int:
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as e:
        raise ScenarioError(f"bad --values list {args.values!r}: {e}") from e
    scenario, _ = resolve_scenario(args.scenario,
                                   args.seed if args.seed is not None else 0)
    rows = sweep_table(scenario, values, duration=args.duration,
                       threads=args.threads, parallel=args.parallel)
    text = format_sweep(rows)
    sys.stdout.write(text)
    outdir = default_outdir(args.out)
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "sweep.txt")
    with open(path, "w") as fh:
        fh.write(text)
    print(f"wrote {path}")
    return 0


def cmd_scenario_emit(args) -> int:
    scenario = builtin_scenario(args.name, args.seed)
    text = json.dumps(scenario_to_dict(scenario), indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="flockgrf",
        description="Predictive flocking simulator: multi-group episodes with "
                    "distributed belief-based control.")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate one scenario and write "
                                       "trajectory/metrics/manifest files")
    run_p.add_argument("--scenario", required=True,
                       help="builtin name, scenario JSON, or a manifest JSON "
                            "from a previous run")
    run_p.add_argument("--method", choices=METHODS, default=None)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out", default=None,
                       help=f"output directory (default ${OUT_DIR_ENV} or ./out)")
    run_p.add_argument("--duration", type=float, default=None,
                       help="override the scenario duration, seconds")
    run_p.add_argument("--threads", type=int, default=None,
                       help="thread pool size for per-robot control (default 1)")
    run_p.add_argument("--belief-trace", action="store_true",
                       help="also write per-decision belief summaries")
    run_p.add_argument("--strip-timing", action="store_true",
                       help="zero the wall-time column for byte-stable output")
    run_p.add_argument("--check", action="store_true",
                       help="exit 4 if any safety violation is recorded")
    run_p.set_defaults(fn=cmd_run)

    met_p = sub.add_parser("metrics", help="recompute metrics from a "
                                           "trajectory CSV")
    met_p.add_argument("csv")
    met_p.add_argument("--manifest", default=None,
                       help="manifest or scenario JSON enabling the "
                            "scenario-dependent metrics")
    met_p.set_defaults(fn=cmd_metrics)

    sw_p = sub.add_parser("sweep", help="episode per cone half-width value")
    sw_p.add_argument("--values", default=",".join(str(v) for v in DEFAULT_SWEEP_VALUES))
    sw_p.add_argument("--scenario", default="doorway")
    sw_p.add_argument("--seed", type=int, default=None)
    sw_p.add_argument("--duration", type=float, default=8.0)
    sw_p.add_argument("--out", default=None)
    sw_p.add_argument("--threads", type=int, default=1)
    sw_p.add_argument("--parallel", action="store_true",
                      help="run the episodes concurrently")
    sw_p.set_defaults(fn=cmd_sweep)

    sc_p = sub.add_parser("scenario", help="scenario utilities")
    sc_sub = sc_p.add_subparsers(dest="action", required=True)
    emit_p = sc_sub.add_parser("emit", help="write a builtin scenario as JSON")
    emit_p.add_argument("name")
    emit_p.add_argument("--seed", type=int, default=0)
    emit_p.add_argument("--out", default=None)
    emit_p.set_defaults(fn=cmd_scenario_emit)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ScenarioError, RecordError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
