"""Command-line front end: ``bounds``, ``capacity``, ``simulate``, ``tradeoff``.

Exit codes: 0 success, 2 usage error, 3 infeasible request.

CSV columns (header row always written):

* bounds:   payload,beta,cost,efficiency_upper,levels,alpha,units
* capacity: write,rate_bits
* simulate: epoch_k,l,B,trials,failures,failure_rate,exact_error,sigma
* tradeoff: curve,payload,efficiency_upper,efficiency_lower,levels,alpha,cells,epsilon,units
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from typing import Any, Sequence

from . import bound_math, capacity, womsim
from .errors import DomainError, OracleRefused

EXIT_USAGE = 2
EXIT_DOMAIN = 3
EFFICIENCY_UNITS = "bits_per_level_times_alpha"

BOUNDS_COLUMNS = ("payload", "beta", "cost", "efficiency_upper", "levels", "alpha", "units")
CAPACITY_COLUMNS = ("write", "rate_bits")
STAGE_COLUMNS = ("epoch_k", "l", "B", "trials", "failures", "failure_rate", "exact_error", "sigma")
TRADEOFF_COLUMNS = (
    "curve",
    "payload",
    "efficiency_upper",
    "efficiency_lower",
    "levels",
    "alpha",
    "cells",
    "epsilon",
    "units",
)
DEFAULT_CELLS = tuple(2**i for i in range(3, 13))


class _Infeasible(Exception):
    pass


def _csv_text(columns: Sequence[str], rows: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in columns})
    return buf.getvalue()


def _json_text(obj: Any) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _emit(args: argparse.Namespace, text: str) -> None:
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def payload_grid(K: int, points: int) -> list[float]:
    top = math.log2(K)
    return [top * i / points for i in range(1, points + 1)]


# --- commands ---------------------------------------------------------------


def cmd_bounds(args: argparse.Namespace) -> str:
    payloads = args.payload or payload_grid(args.levels, args.payload_grid)
    try:
        points = [bound_math.upper_bound_efficiency(p, args.levels, args.alpha) for p in payloads]
    except DomainError as exc:
        raise _Infeasible(str(exc)) from exc
    rows = [
        {
            "payload": pt.payload,
            "beta": pt.beta,
            "cost": pt.cost,
            "efficiency_upper": pt.efficiency_upper,
            "levels": pt.levels,
            "alpha": pt.alpha,
            "units": EFFICIENCY_UNITS,
        }
        for pt in points
    ]
    if args.format == "csv":
        return _csv_text(BOUNDS_COLUMNS, rows)
    return _json_text(
        {
            "levels": args.levels,
            "alpha": args.alpha,
            "units": EFFICIENCY_UNITS,
            "rows": [{k: r[k] for k in BOUNDS_COLUMNS[:4]} for r in rows],
        }
    )


def cmd_capacity(args: argparse.Namespace) -> str:
    oracle = None
    if args.with_oracle:
        try:
            oracle = capacity.brute_force_sum_rate(args.levels, args.writes, args.grid_steps)
        except OracleRefused as exc:
            raise _Infeasible(str(exc)) from exc
    rates, chain = capacity.max_sum_rate(args.levels, args.writes, args.restarts, args.seed)
    if args.format == "csv":
        rows = [{"write": t, "rate_bits": r} for t, r in enumerate(rates.rates, start=1)]
        return _csv_text(CAPACITY_COLUMNS, rows)
    report: dict[str, Any] = {
        "levels": args.levels,
        "writes": args.writes,
        "restarts": args.restarts,
        "seed": args.seed,
        "units": "bits",
        "sum_rate": rates.sum_rate,
        "rates": list(rates.rates),
        "sequence_ceiling": capacity.sequence_ceiling_bits(args.levels, args.writes)
        if args.levels ** args.writes <= 10**6
        else None,
        "conditionals": [m.tolist() for m in chain.conditionals],
    }
    if oracle is not None:
        report["oracle"] = {
            "grid_steps": args.grid_steps,
            "sum_rate": oracle.sum_rate,
            "rates": list(oracle.rates),
            "gap": rates.sum_rate - oracle.sum_rate,
        }
    return _json_text(report)


def _stage_rows(summary: womsim.SimSummary) -> list[dict[str, Any]]:
    return [{k: getattr(s, k) for k in STAGE_COLUMNS} for s in summary.per_stage]


def cmd_simulate(args: argparse.Namespace, parser: argparse.ArgumentParser) -> str:
    try:
        config = womsim.SimConfig(
            N=args.cells,
            K=args.levels,
            epsilon=args.epsilon,
            seed=args.seed,
            trials=args.trials,
            alpha=args.alpha,
        )
    except DomainError as exc:
        parser.error(str(exc))
    summary = womsim.simulate(config, workers=args.workers)
    stage_rows = _stage_rows(summary)
    if args.stages_csv:
        with open(args.stages_csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(_csv_text(STAGE_COLUMNS, stage_rows))
    if args.format == "csv":
        return _csv_text(STAGE_COLUMNS, stage_rows)
    N, K, eps = config.N, config.K, config.epsilon
    report = {
        "config": {
            "cells": N,
            "levels": K,
            "epsilon": eps,
            "trials": config.trials,
            "seed": config.seed,
            "alpha": config.alpha,
        },
        "units": {"bits": "bits_per_block", "payload": "bits_per_cell_per_write", "efficiency": EFFICIENCY_UNITS},
        "stages_run": summary.stages_run,
        "stages_planned": (K - 1) * N,
        "bits_attempted": summary.bits_attempted,
        "mean_bits_recorded": summary.mean_bits_recorded,
        "std_bits_recorded": summary.std_bits_recorded,
        "mean_bits_lost": summary.bits_attempted - summary.mean_bits_recorded,
        "failures": summary.failures,
        "failure_rate": summary.failures / (summary.stages_run * config.trials) if summary.stages_run else 0.0,
        "mean_payload": summary.mean_payload,
        "payload_attempted": summary.payload_attempted,
        "mean_efficiency": summary.mean_efficiency,
        "std_efficiency": summary.std_efficiency,
        "closed_form": {
            "expected_rate_lower_bound": womsim.expected_rate_lower_bound(N, K, eps),
            "expected_bits_exact": womsim.expected_bits_exact(N, K, eps),
            "payload_formula": womsim.payload_formula(N, eps),
            "efficiency_lower_bound_asymptotic": {
                "value": womsim.efficiency_lower_bound_asymptotic(N, config.alpha),
                "log_base": 2,
                "base_ambiguous": True,
            },
        },
        "per_stage": stage_rows,
    }
    return _json_text(report)


def tradeoff_rows(
    K: int, alpha: float, grid_points: int, cells: Sequence[int], epsilon: float = 0.5
) -> list[dict[str, Any]]:
    """Upper-bound curve over a payload grid plus scheme points swept over N, sorted by payload."""
    rows = []
    for p in payload_grid(K, grid_points):
        pt = bound_math.upper_bound_efficiency(p, K, alpha)
        rows.append(
            {
                "curve": "upper",
                "payload": p,
                "efficiency_upper": pt.efficiency_upper,
                "efficiency_lower": None,
                "levels": K,
                "alpha": alpha,
                "cells": None,
                "epsilon": None,
                "units": EFFICIENCY_UNITS,
            }
        )
    for N in cells:
        p = womsim.payload_formula(N, epsilon)
        if p <= 0.0:
            continue
        lower = alpha * womsim.expected_rate_lower_bound(N, K, epsilon) / (K * N)
        rows.append(
            {
                "curve": "lower",
                "payload": p,
                "efficiency_upper": bound_math.upper_bound_efficiency(p, K, alpha).efficiency_upper,
                "efficiency_lower": lower,
                "levels": K,
                "alpha": alpha,
                "cells": N,
                "epsilon": epsilon,
                "units": EFFICIENCY_UNITS,
            }
        )
    rows.sort(key=lambda r: (r["payload"], r["curve"]))
    return rows


def cmd_tradeoff(args: argparse.Namespace, parser: argparse.ArgumentParser) -> str:
    if any(n < 2 for n in args.cells):
        parser.error("--cells values must be >= 2")
    if not 0.0 < args.epsilon < 1.0:
        parser.error("--epsilon must lie in (0, 1)")
    rows = tradeoff_rows(args.levels, args.alpha, args.payload_grid, args.cells, args.epsilon)
    if args.format == "csv":
        return _csv_text(TRADEOFF_COLUMNS, rows)
    return _json_text({"levels": args.levels, "alpha": args.alpha, "units": EFFICIENCY_UNITS, "rows": rows})


# --- parser -----------------------------------------------------------------


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _levels(text: str) -> int:
    v = int(text)
    if v < 2:
        raise argparse.ArgumentTypeError(f"levels must be >= 2, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not (math.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be a 64-bit unsigned integer, got {text}")
    return v


def _cells_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--out", help="output path (default: standard output)")

    parser = argparse.ArgumentParser(
        prog="flashcode", description="Coding-efficiency bounds and rewriting-scheme simulation for flash memory"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", parents=[common], help="upper bound on efficiency at given payloads")
    p.add_argument("--levels", type=_levels, default=8)
    p.add_argument("--alpha", type=_positive_float, default=1.0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--payload", type=float, action="append", help="payload in bits/cell/write (repeatable)")
    g.add_argument("--payload-grid", type=_positive_int, default=30, help="evenly spaced payloads over (0, log2 K]")

    p = sub.add_parser("capacity", parents=[common], help="maximise the achievable sum rate")
    p.add_argument("--levels", type=_levels, default=2)
    p.add_argument("--writes", type=_positive_int, default=2)
    p.add_argument("--restarts", type=_positive_int, default=16)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--with-oracle", action="store_true", help="also run the brute-force grid oracle")
    p.add_argument("--grid-steps", type=_positive_int, default=200)

    p = sub.add_parser("simulate", parents=[common], help="simulate the random-binning scheme")
    p.add_argument("--cells", type=int, default=64)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--stages-csv", help="also write the per-stage table here")

    p = sub.add_parser("tradeoff", parents=[common], help="efficiency/payload tradeoff curves")
    p.add_argument("--levels", type=_levels, default=8)
    p.add_argument("--alpha", type=_positive_float, default=1.0)
    p.add_argument("--payload-grid", type=_positive_int, default=60)
    p.add_argument("--cells", type=_cells_list, default=list(DEFAULT_CELLS), help="comma-separated N sweep")
    p.add_argument("--epsilon", type=float, default=0.5)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "bounds":
            text = cmd_bounds(args)
        elif args.command == "capacity":
            text = cmd_capacity(args)
        elif args.command == "simulate":
            text = cmd_simulate(args, parser)
        else:
            text = cmd_tradeoff(args, parser)
    except _Infeasible as exc:
        print(f"flashcode {args.command}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    _emit(args, text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
