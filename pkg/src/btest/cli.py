"""Command-line entry point.

``btest test X.csv Y.csv`` prints a JSON test result and exits 0 (accept),
1 (reject) or 2 (usage or data error). The ``bench-blobs``, ``complexity``,
``timing`` and ``calibrate`` subcommands write CSV (default) or JSON reports;
``--manifest PATH`` additionally writes a JSON run manifest.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .bench import (
    BlobConfig,
    DEFAULT_STRETCH,
    TestSetup,
    estimate_error_rates,
    sample_complexity,
    timing_profile,
)
from .data import load_csv, pair_samples
from .errors import BTestError, BudgetExceeded
from .nulls import BTestConfig, NullKind, run_test
from .selection import SelectionStrategy, choose_kernel

SCHEMA_VERSION = 1

CSV_COLUMNS = {
    "bench-blobs": ["kernel", "block_policy", "null", "alpha", "n", "replications",
                    "type1", "type1_stderr", "type2", "type2_stderr"],
    "complexity": ["kernel", "block_policy", "null", "alpha", "target_type2", "replications",
                   "status", "n", "largest_n_tried"],
    "timing": ["kernel", "block_policy", "null", "n", "seconds"],
    "calibrate": ["q_stretch", "status", "n", "largest_n_tried"],
}


# -- flag parsing -----------------------------------------------------------

def _ranged(kind, low=None, high=None, low_open=False, high_open=False):
    def parse(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {text!r}") from None
        if isinstance(value, float) and not math.isfinite(value):
            raise argparse.ArgumentTypeError(f"must be finite, got {text}")
        if low is not None and (value <= low if low_open else value < low):
            raise argparse.ArgumentTypeError(f"must be {'>' if low_open else '>='} {low}, got {text}")
        if high is not None and (value >= high if high_open else value > high):
            raise argparse.ArgumentTypeError(f"must be {'<' if high_open else '<='} {high}, got {text}")
        return value

    return parse


def _kernel(text):
    if text == "median":
        return SelectionStrategy.median()
    if text == "maxratio":
        return SelectionStrategy.max_ratio()
    if text.startswith("fixed:"):
        sigma = _ranged(float, 0, low_open=True)(text.split(":", 1)[1])
        return SelectionStrategy.fixed(sigma)
    raise argparse.ArgumentTypeError(f"expected fixed:<sigma>, median or maxratio, got {text!r}")


def _null(text):
    name, _, arg = text.partition(":")
    if name == "clt" and not arg:
        return {"null": NullKind.GAUSSIAN}
    if name == "gamma" and not arg:
        return {"null": NullKind.GAMMA}
    if name == "permutation":
        count = _ranged(int, 100)(arg) if arg else 1000
        return {"null": NullKind.PERMUTATION, "num_shuffles": count}
    if name == "spectrum":
        count = _ranged(int, 1)(arg) if arg else 500
        return {"null": NullKind.SPECTRUM, "num_draws": count}
    raise argparse.ArgumentTypeError(
        f"expected clt, permutation[:<shuffles>], spectrum[:<draws>] or gamma, got {text!r}"
    )


def _list_of(item):
    def parse(text):
        return [item(part) for part in text.split(",") if part]

    return parse


def _block_token(text):
    if text == "auto":
        return None
    return _ranged(int, 2)(text)


def _common(p: argparse.ArgumentParser, multi: bool) -> None:
    p.add_argument("--alpha", type=_ranged(float, 0, 1, True, True), default=0.05)
    group = p.add_mutually_exclusive_group()
    if multi:
        group.add_argument("--block-size", type=_list_of(_block_token), default=None,
                           help="comma-separated block sizes; 'auto' means round(n**gamma)")
    else:
        group.add_argument("--block-size", type=_ranged(int, 2), default=None)
    group.add_argument("--gamma", type=_ranged(float, 0, 1, True, True), default=None)
    if multi:
        p.add_argument("--kernel", type=_list_of(_kernel), default=None,
                       help="comma-separated list of fixed:<sigma>, median, maxratio")
    else:
        p.add_argument("--kernel", type=_kernel, default=None,
                       help="fixed:<sigma>, median or maxratio (default median)")
    p.add_argument("--null", type=_null, default={"null": NullKind.GAUSSIAN})
    p.add_argument("--seed", type=_ranged(int, 0, 2**64 - 1), default=0)
    p.add_argument("--out", choices=("json", "csv"), default="json" if not multi else "csv")
    p.add_argument("--threads", type=_ranged(int, 1), default=os.cpu_count() or 1)


def _blob_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--stretch", type=_ranged(float, 1), default=DEFAULT_STRETCH,
                   help="eigenvalue ratio of Q's per-blob covariance")
    p.add_argument("--spacing", type=_ranged(float, 0, low_open=True), default=10.0)
    p.add_argument("--grid-size", type=_ranged(int, 1), default=5)
    p.add_argument("--manifest", type=Path, default=None, help="write a JSON run manifest here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="btest", description="Block-averaged MMD two-sample tests.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="two-sample test on two CSV files")
    p.add_argument("x_csv", type=Path)
    p.add_argument("y_csv", type=Path)
    p.add_argument("--header", action="store_true", help="skip a header line in both files")
    _common(p, multi=False)

    p = sub.add_parser("bench-blobs", help="Type I / II error rates on the blob benchmark")
    _common(p, multi=True)
    _blob_flags(p)
    p.add_argument("--n", type=_ranged(int, 4), default=2000)
    p.add_argument("--replications", type=_ranged(int, 100), default=500)

    p = sub.add_parser("complexity", help="samples needed for the target error rates")
    _common(p, multi=True)
    _blob_flags(p)
    p.add_argument("--target-type2", type=_ranged(float, 0, 1, True, True), default=0.05)
    p.add_argument("--replications", type=_ranged(int, 100), default=500)
    p.add_argument("--n-min", type=_ranged(int, 4), default=64)
    p.add_argument("--n-cap", type=_ranged(int, 4), default=60_000)

    p = sub.add_parser("timing", help="wall-clock scaling of one test")
    _common(p, multi=True)
    _blob_flags(p)
    p.add_argument("--n-values", type=_list_of(_ranged(int, 4)),
                   default=[2**k for k in range(10, 17)])
    p.add_argument("--runs", type=_ranged(int, 1), default=5)

    p = sub.add_parser("calibrate", help="sample complexity of sigma=1, B=sqrt(n) per Q stretch")
    _common(p, multi=True)
    _blob_flags(p)
    p.add_argument("--stretch-values", type=_list_of(_ranged(float, 1)), default=[4.0, 6.0, 8.0, 10.0])
    p.add_argument("--replications", type=_ranged(int, 100), default=500)
    p.add_argument("--n-min", type=_ranged(int, 4), default=64)
    p.add_argument("--n-cap", type=_ranged(int, 4), default=60_000)
    return parser


# -- helpers ------------------------------------------------------------------

def _config(args, block_size=None, gamma=None) -> BTestConfig:
    return BTestConfig(
        block_size=block_size,
        gamma=gamma if gamma is not None else 0.5,
        alpha=args.alpha,
        seed=args.seed,
        **args.null,
    )


def _setups(args):
    """One TestSetup per (kernel, block policy) combination."""
    kernels = args.kernel or [SelectionStrategy.fixed(1.0)]
    if args.block_size is not None:
        blocks = [(b, None) for b in args.block_size]
    else:
        blocks = [(None, args.gamma)]
    return [TestSetup(_config(args, b, g), k) for k in kernels for b, g in blocks]


def _policy(setup: TestSetup) -> str:
    c = setup.config
    return str(c.block_size) if c.block_size is not None else f"n^{c.gamma:g}"


def _blob_config(args, **overrides) -> BlobConfig:
    cfg = BlobConfig(grid_size=args.grid_size, spacing=args.spacing, q_stretch=args.stretch, seed=args.seed)
    return replace(cfg, **overrides)


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def _format(rows, command: str, fmt: str) -> str:
    if fmt == "json":
        return json.dumps({"schema_version": SCHEMA_VERSION, "rows": rows}, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS[command], lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in CSV_COLUMNS[command]})
    return buf.getvalue()


def _fmt(x):
    return None if x is None else float(f"{x:.6g}")


# -- subcommands --------------------------------------------------------------

def cmd_test(args) -> int:
    x = load_csv(args.x_csv, args.header)
    y = load_csv(args.y_csv, args.header)
    s = pair_samples(x, y, args.seed)
    config = _config(args, args.block_size, args.gamma)
    strategy = args.kernel or SelectionStrategy.median()
    kernel, test_sample = choose_kernel(strategy, s, config.resolve_block_size, seed=args.seed)
    result = run_test(config, test_sample, kernel)
    result.diagnostics["strategy"] = strategy.describe()
    if args.out == "json":
        sys.stdout.write(result.to_json(indent=2) + "\n")
    else:
        row = result.to_dict()
        diag = row.pop("diagnostics")
        row.update({k: diag[k] for k in ("block_size", "num_blocks", "kernel", "skewness")})
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        writer.writeheader()
        writer.writerow(row)
        sys.stdout.write(buf.getvalue())
    return 1 if result.reject else 0


def cmd_bench_blobs(args):
    cfg = _blob_config(args)
    rows = []
    for setup in _setups(args):
        rates = estimate_error_rates(cfg, setup, args.n, args.replications, threads=args.threads)
        rows.append({
            "kernel": setup.strategy.describe(), "block_policy": _policy(setup),
            "null": setup.config.null.value, "alpha": setup.config.alpha, "n": args.n,
            "replications": args.replications,
            "type1": _fmt(rates.type1), "type1_stderr": _fmt(rates.type1_stderr),
            "type2": _fmt(rates.type2), "type2_stderr": _fmt(rates.type2_stderr),
        })
    return rows


def _complexity_row(cfg, setup, args):
    row = {"status": "ok", "n": None, "largest_n_tried": None}
    try:
        row["n"] = sample_complexity(
            cfg, setup, args.alpha, getattr(args, "target_type2", 0.05), args.replications,
            n_min=args.n_min, n_cap=args.n_cap, threads=args.threads,
        )
        row["largest_n_tried"] = row["n"]
    except BudgetExceeded as exc:
        row["status"] = "budget_exceeded"
        row["largest_n_tried"] = exc.largest_n
    return row


def cmd_complexity(args):
    cfg = _blob_config(args)
    rows = []
    for setup in _setups(args):
        row = {
            "kernel": setup.strategy.describe(), "block_policy": _policy(setup),
            "null": setup.config.null.value, "alpha": args.alpha,
            "target_type2": args.target_type2, "replications": args.replications,
        }
        row.update(_complexity_row(cfg, setup, args))
        rows.append(row)
    return rows


def cmd_timing(args):
    cfg = _blob_config(args)
    rows = []
    for setup in _setups(args):
        for n, seconds in timing_profile(setup, args.n_values, args.runs, cfg):
            rows.append({
                "kernel": setup.strategy.describe(), "block_policy": _policy(setup),
                "null": setup.config.null.value, "n": n, "seconds": _fmt(seconds),
            })
    return rows


def cmd_calibrate(args):
    setup = TestSetup(_config(args, None, args.gamma), SelectionStrategy.fixed(1.0))
    rows = []
    for stretch in args.stretch_values:
        row = {"q_stretch": stretch}
        row.update(_complexity_row(_blob_config(args, q_stretch=stretch), setup, args))
        rows.append(row)
    return rows


COMMANDS = {
    "bench-blobs": cmd_bench_blobs,
    "complexity": cmd_complexity,
    "timing": cmd_timing,
    "calibrate": cmd_calibrate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    started = time.perf_counter()
    try:
        if args.command == "test":
            return cmd_test(args)
        if args.command == "timing":
            args.threads = 1
        rows = COMMANDS[args.command](args)
    except (BTestError, OSError, ValueError) as exc:
        print(f"btest: error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(_format(rows, args.command, args.out))
    if args.manifest is not None:
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "command": args.command,
            "argv": list(sys.argv[1:] if argv is None else argv),
            "seed": args.seed,
            "threads": args.threads,
            "version": __version__,
            "git_describe": _git_describe(),
            "wall_clock_s": time.perf_counter() - started,
            "rows": rows,
        }
        args.manifest.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
