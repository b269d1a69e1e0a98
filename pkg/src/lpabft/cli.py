"""Command-line entry point: ``lpabft {campaign,analyze,bench,eb-check}``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import kernels, model
from .config import ConfigError, ConfigNotFound, ConfigParseError, builtin_shapes, load_config, read_shapes
from .faultlab import default_seed, render_report, run_campaign, write_report_csv


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def cmd_campaign(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigNotFound as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"error: invalid config {args.config}: {exc}", file=sys.stderr)
        return 4
    if args.workers:
        cfg = replace(cfg, workers=args.workers)
    report = run_campaign(cfg)
    out = Path(args.out) if args.out else Path(args.config).with_suffix(".csv")
    write_report_csv(report, out)
    print(render_report(report))
    print(f"report written to {out}")
    return 0


def _pct(x):
    return f"{100 * x:.2f}%"


def cmd_analyze(args) -> int:
    m, n, k, d, pool = args.m, args.n, args.k, args.d, args.pool
    print(f"shape (m, n, k) = ({m}, {n}, {k}); EB d = {d}, pooling = {pool}")
    print()
    print("encoding overhead (fraction of GEMM work)")
    ov_a, ov_b = model.encode_overhead("A", m, n, k), model.encode_overhead("B", m, n, k)
    print(f"  encode A: {ov_a:.6f}")
    print(f"  encode B: {ov_b:.6f}   ({'B' if ov_b < ov_a else 'A'} is cheaper)")
    print()
    print("detection probability (modulus 127)")
    for target, fn in (("B", lambda mdl: model.detect_prob_error_in_B(mdl, m)),
                       ("C_temp", model.detect_prob_error_in_C)):
        for mdl in model.FaultModel:
            est = fn(mdl)
            prefix = ">= " if est.isLowerBound else ""
            print(f"  error in {target:<6} {mdl.value:<16} {prefix}{_pct(est.probability)}")
    worst = model.detect_prob_error_in_B(model.FaultModel.SINGLE_BIT_FLIP, 1).probability
    print(f"  (bit flip in B, any m >= 1: >= {_pct(worst)})")
    print()
    print("EmbeddingBag check")
    print(f"  compute overhead: {model.eb_overhead(pool, d):.6f}")
    print(f"  memory overhead (8-bit table): {model.eb_memory_overhead(8, d):.6f}")
    print(f"  memory overhead (4-bit table): {model.eb_memory_overhead(4, d):.6f}")
    return 0


def cmd_bench(args) -> int:
    from .bench import CacheFlusher, bench_eb, bench_gemm_shape, results_csv

    try:
        shapes = read_shapes(args.shapes) if args.shapes else builtin_shapes("bench")
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.reps < 5:
        print(f"error: --reps must be >= 5, got {args.reps}", file=sys.stderr)
        return 2
    rng = np.random.default_rng(args.seed)
    results = []
    print(f"backend: {kernels.BACKEND}", file=sys.stderr)
    if not args.no_gemm:
        for shape in shapes:
            r = bench_gemm_shape(shape, args.reps, rng)
            results.append(r)
            print(f"gemm {r.label:<16} overhead {r.overheadFraction:+.3f}", file=sys.stderr)
    if not args.no_eb:
        flusher = CacheFlusher()
        for d in args.eb_dims:
            for weighted in (False, True):
                r = bench_eb(args.eb_rows, d, args.eb_pool, args.eb_batch, args.reps, rng, flusher, weighted)
                results.append(r)
                print(f"eb   {r.label:<36} overhead {r.overheadFraction:+.3f}", file=sys.stderr)
    text = results_csv(results)
    if args.out:
        Path(args.out).write_text(text)
        print(f"results written to {args.out}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eb_check(args) -> int:
    from .embedding import TableFormatError, batch_abft_eb, load_table, read_bags

    try:
        table = load_table(args.table, validate=not args.no_validate)
        bags = read_bags(args.indices)
    except (TableFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    flagged = 0
    print("bag,pooling,rsum,csum,err")
    for i, res in enumerate(batch_abft_eb(table, bags)):
        if isinstance(res, Exception):
            print(f"{i},{len(bags[i])},,,invalid: {res}")
            flagged += 1
            continue
        print(f"{i},{len(bags[i])},{res.rSum:.9g},{res.cSum:.9g},{int(res.err)}")
        flagged += res.err
    return 1 if flagged else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lpabft", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("campaign", help="run a fault-injection campaign from a TOML config")
    c.add_argument("config")
    c.add_argument("--out", help="CSV report path (default: config path with .csv suffix)")
    c.add_argument("--workers", type=_positive_int, help="override the config's worker count")
    c.set_defaults(func=cmd_campaign)

    a = sub.add_parser("analyze", help="print analytic overhead and detection predictions")
    a.add_argument("--m", type=_positive_int, required=True)
    a.add_argument("--n", type=_positive_int, required=True)
    a.add_argument("--k", type=_positive_int, required=True)
    a.add_argument("--d", type=_positive_int, default=64, help="embedding dimension")
    a.add_argument("--pool", type=_positive_int, default=100, help="EB pooling size")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("bench", help="time protected vs unprotected kernels")
    b.add_argument("--shapes", help="shape file (default: shipped bench set)")
    b.add_argument("--reps", type=int, default=9)
    b.add_argument("--out", help="CSV output path (default: stdout)")
    b.add_argument("--seed", type=int, default=default_seed())
    b.add_argument("--eb-rows", type=_positive_int, default=500_000)
    b.add_argument("--eb-dims", type=_positive_int, nargs="+", default=[32, 64, 128, 256])
    b.add_argument("--eb-pool", type=_positive_int, default=100)
    b.add_argument("--eb-batch", type=_positive_int, default=10)
    b.add_argument("--no-gemm", action="store_true")
    b.add_argument("--no-eb", action="store_true")
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("eb-check", help="run checked EmbeddingBag lookups against a table file")
    e.add_argument("table")
    e.add_argument("indices")
    e.add_argument("--no-validate", action="store_true", help="skip row-sum validation on load")
    e.set_defaults(func=cmd_eb_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
