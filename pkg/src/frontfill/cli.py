"""Command-line interface: fills, benchmarks, leaf sweeps, validation.

Exit codes: 0 ok, 1 usage error, 2 invariant failure, 3 internal error.
The process runs one fill at a time; parallelism lives inside fill_parallel.
"""

from __future__ import annotations

import argparse
import csv
import json
import socket
import sys
from datetime import datetime, timezone

import numpy as np

from . import validate as validation
from .fill import FillConfig, FillStats, PointSet, fill_parallel, fill_sequential
from .geometry import (
    Box,
    ConstantSpacing,
    Disc,
    Domain,
    Spacing,
    domain_center,
    radial_linear_for,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVARIANT = 2
EXIT_INTERNAL = 3


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_domain(text: str, dim: int) -> Domain:
    kind, _, rest = text.partition(":")
    if kind == "disc":
        try:
            radius = float(rest)
        except ValueError:
            raise UsageError(f"bad disc radius {rest!r}") from None
        return Disc(center=np.zeros(dim), radius=radius)
    if kind == "box":
        lo_s, sep, hi_s = rest.partition("..")
        if not sep:
            raise UsageError(f"box wants lo..hi, got {rest!r}")
        try:
            lo = [float(v) for v in lo_s.split(",")]
            hi = [float(v) for v in hi_s.split(",")]
        except ValueError:
            raise UsageError(f"bad box bounds {rest!r}") from None
        if len(lo) == 1:
            lo = lo * dim
        if len(hi) == 1:
            hi = hi * dim
        if len(lo) != dim or len(hi) != dim:
            raise UsageError(f"box bounds must have 1 or {dim} components")
        return Box(lo=np.array(lo), hi=np.array(hi))
    raise UsageError(f"unknown domain {text!r} (want disc:R or box:lo..hi)")


def parse_spacing(text: str, domain: Domain) -> Spacing:
    if ":" in text:
        h0_s, _, h1_s = text.partition(":")
        try:
            return radial_linear_for(domain, float(h0_s), float(h1_s))
        except ValueError as e:
            raise UsageError(str(e)) from None
    try:
        return ConstantSpacing(float(text))
    except ValueError as e:
        raise UsageError(str(e)) from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise UsageError(f"bad integer list {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None


def write_points_csv(path: str, points: PointSet, with_owner: bool) -> None:
    d = points.dim
    with open(path, "w", encoding="utf-8", newline="") as f:
        header = ",".join(f"x{a}" for a in range(d))
        if with_owner:
            header += ",owner_thread"
        f.write(header + "\n")
        owners = points.owners
        for i, row in enumerate(points.coords):
            line = ",".join(f"{v:.17g}" for v in row)
            if with_owner:
                line += f",{int(owners[i])}"
            f.write(line + "\n")


def write_events_csv(path: str, events: list[tuple]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("timestamp_ns,thread,cell,transition\n")
        for ts, tid, cell, tr in events:
            f.write(f"{ts},{tid},{cell},{tr}\n")


def read_points_csv(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if not header:
            raise UsageError(f"{path}: empty file")
        cols = header.split(",")
        coord_cols = [i for i, c in enumerate(cols) if c.startswith("x")]
        if not coord_cols:
            raise UsageError(f"{path}: header {header!r} has no coordinate columns")
        rows = []
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                rows.append([float(parts[i]) for i in coord_cols])
            except (ValueError, IndexError):
                raise UsageError(f"{path}:{lineno}: malformed row {line!r}") from None
    if not rows:
        raise UsageError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def _config_from_args(args, threads: int, spacing=None, work_leaf=None) -> FillConfig:
    domain = parse_domain(args.domain, args.dim)
    return FillConfig(
        domain=domain,
        spacing=spacing if spacing is not None else parse_spacing(args.h, domain),
        threads=threads,
        candidates_k=args.candidates,
        spatial_leaf_capacity=args.spatial_leaf,
        work_leaf_limit=work_leaf if work_leaf is not None else args.work_leaf,
        rng_seed=args.seed,
        pin_threads=args.pin,
        record_events=bool(getattr(args, "events", None)),
    )


def run_one_fill(cfg: FillConfig) -> tuple[PointSet, FillStats]:
    """Sequential path for one thread (deterministic), staged parallel otherwise."""
    if cfg.threads == 1:
        seed = domain_center(cfg.domain)
        return fill_sequential(cfg, [seed])
    return fill_parallel(cfg)


def _run_record(cfg: FillConfig, stats: FillStats, report, rep: int) -> dict:
    rec = {
        "hostname": socket.gethostname(),
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "repetition": rep,
        "domain": repr(cfg.domain),
        "spacing": repr(cfg.spacing),
        "threads": cfg.threads,
        "candidates_k": cfg.resolved_k,
        "spatial_leaf_capacity": cfg.spatial_leaf_capacity,
        "work_leaf_limit": cfg.work_leaf_limit,
        "rng_seed": cfg.rng_seed,
        "max_stages": cfg.max_stages,
        "points": stats.points_inserted,
        "stages": stats.stages,
        "total_wall_time": stats.total_wall_time,
        "stage0_fraction": stats.stage0_fraction,
        "throughput": stats.throughput,
        "throughput_per_thread": stats.throughput / cfg.threads,
        "repair_removals": stats.repair_removals,
    }
    if report is not None:
        rec["violating_pairs"] = len(report.violating_pairs)
        rec["containment_failures"] = report.containment_failures
        rec["coverage_max_gap"] = report.coverage_max_gap
    return rec


def cmd_fill(args) -> int:
    threads = _int_list(args.threads)
    if len(threads) != 1:
        raise UsageError("fill wants exactly one thread count")
    cfg = _config_from_args(args, threads[0])
    points, stats = run_one_fill(cfg)

    if args.out:
        write_points_csv(args.out, points, with_owner=cfg.threads > 1)
    report = None
    exit_code = EXIT_OK
    if args.validate:
        report = validation.full_report(
            cfg.domain, points.coords, cfg.spacing, rng=np.random.default_rng(cfg.rng_seed)
        )
        if not report.ok:
            exit_code = EXIT_INVARIANT
    if args.stats:
        doc = {"config": _run_record(cfg, stats, report, 0), "stats": stats.to_dict()}
        if report is not None:
            doc["validation"] = report.to_dict()
        with open(args.stats, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2)
    if args.events:
        if stats.events is None:
            print("note: --events is only recorded by parallel fills", file=sys.stderr)
        else:
            write_events_csv(args.events, stats.events)
    print(
        f"{stats.points_inserted} points in {stats.total_wall_time:.3f} s "
        f"({stats.throughput:,.0f} pts/s, {stats.stages} stage(s), "
        f"{stats.repair_removals} repaired)"
    )
    return exit_code


_BENCH_FIELDS = [
    "hostname",
    "timestamp",
    "repetition",
    "domain",
    "spacing",
    "threads",
    "candidates_k",
    "spatial_leaf_capacity",
    "work_leaf_limit",
    "rng_seed",
    "max_stages",
    "points",
    "stages",
    "total_wall_time",
    "stage0_fraction",
    "throughput",
    "throughput_per_thread",
    "repair_removals",
]


def _bench_grid(args, out_path: str, leaf_limits: list[int], mark_default=False) -> int:
    threads_list = _int_list(args.threads)
    h_list = _float_list(args.h)
    rows = []
    for limit in leaf_limits:
        for h in h_list:
            for threads in threads_list:
                spacing = ConstantSpacing(h)
                for rep in range(args.reps):
                    cfg = _config_from_args(
                        args, threads, spacing=spacing, work_leaf=limit
                    )
                    _, stats = run_one_fill(cfg)
                    row = _run_record(cfg, stats, None, rep)
                    if mark_default:
                        row["default_recommendation"] = limit == 100
                    rows.append(row)
                    print(
                        f"threads={threads} h={h} leaf={limit} rep={rep}: "
                        f"{stats.throughput:,.0f} pts/s",
                        file=sys.stderr,
                    )
    fields = _BENCH_FIELDS + (["default_recommendation"] if mark_default else [])
    with open(out_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {out_path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.reps < 1:
        raise UsageError("reps must be >= 1")
    return _bench_grid(args, args.out, [args.work_leaf])


def cmd_sweep_leaf(args) -> int:
    if args.reps < 1:
        raise UsageError("reps must be >= 1")
    limits = _int_list(args.limits)
    return _bench_grid(args, args.out, limits, mark_default=True)


def cmd_validate(args) -> int:
    domain = parse_domain(args.domain, args.dim)
    spacing = parse_spacing(args.h, domain)
    points = read_points_csv(args.points)
    if points.shape[1] != args.dim:
        raise UsageError(f"points file has dimension {points.shape[1]}, expected {args.dim}")
    report = validation.full_report(
        domain, points, spacing, rng=np.random.default_rng(args.seed)
    )
    print(report.to_json(indent=2))
    return EXIT_OK if report.ok else EXIT_INVARIANT


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--domain", default="disc:1.0", help="disc:R or box:lo..hi")
    p.add_argument("--h", default="0.05", help="constant h, or h0:h1 for radial")
    p.add_argument("--dim", type=int, default=2, help="dimension (2 or 3 tested)")
    p.add_argument("--seed", type=int, default=0, help="rng seed")
    p.add_argument("--work-leaf", type=int, default=100, dest="work_leaf")
    p.add_argument("--spatial-leaf", type=int, default=40, dest="spatial_leaf")
    p.add_argument("--candidates", type=int, default=None)
    p.add_argument("--pin", action="store_true", help="best-effort thread pinning")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="frontfill", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fill", help="run one fill and write points/stats")
    _add_common(p)
    p.add_argument("--threads", default="1")
    p.add_argument("--out", default=None, help="points CSV path")
    p.add_argument("--stats", default=None, help="stats JSON path")
    p.add_argument("--events", default=None, help="work-tree event log CSV path")
    p.add_argument("--validate", action="store_true")
    p.set_defaults(func=cmd_fill)

    p = sub.add_parser("bench", help="strong-scaling benchmark grid")
    _add_common(p)
    p.add_argument("--threads", default="1,2,4")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--out", default="bench.csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep-leaf", help="work-leaf-limit calibration sweep")
    _add_common(p)
    p.add_argument("--threads", default="2,8")
    p.add_argument("--limits", default="25,50,100,200,400,800")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=cmd_sweep_leaf)

    p = sub.add_parser("validate", help="validate a points CSV file")
    _add_common(p)
    p.add_argument("points", help="points CSV (as written by fill)")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
