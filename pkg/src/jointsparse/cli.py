"""Command-line entry points: ``bench``, ``theory`` and ``oracle``.

Exit codes: 0 success, 1 invalid input, 2 a solver or numerical check failed
in a way that leaves no usable result.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time

import numpy as np

from . import io
from .experiments import (
    METHODS,
    SyntheticConfig,
    generate_synthetic,
    parse_lambda_mode,
    render_table,
    run_benchmark,
    run_realdata,
)
from .model import DimensionError

EXIT_OK, EXIT_INPUT, EXIT_FATAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; that code is reserved here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _methods(text):
    names = [v.strip() for v in text.split(",") if v.strip()]
    if not names:
        raise argparse.ArgumentTypeError("no methods given")
    return names


def _write_csv(path, records):
    keys = sorted({k for r in records for k in r})
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in records:
            w.writerow(r)


def _run(handler, args):
    try:
        return handler(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, DimensionError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


# --- bench ----------------------------------------------------------------


def _add_synth_args(p):
    p.add_argument("--m", type=int, default=30)
    p.add_argument("--d", type=int, default=256)
    p.add_argument("--n", type=int, default=150)
    p.add_argument("--k", type=_ints, default=[50], help="support size; comma list for several")
    p.add_argument("--overlap", type=float, default=1.0)
    p.add_argument("--noise-var", type=float, default=0.1)
    p.add_argument("--corr", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)


def _bench_synth(args):
    for name in args.methods:
        if name not in METHODS:
            raise ValueError(f"unknown method {name!r}; choose from {','.join(sorted(METHODS))}")
    parse_lambda_mode(args.lam)
    rows = []
    started = time.perf_counter()
    for k in args.k:
        cfg = SyntheticConfig(args.m, args.d, args.n, k, args.overlap, args.noise_var, args.corr, args.seed)
        rows += run_benchmark(cfg, args.methods, args.runs, args.cv_folds, args.lam, args.workers)
    elapsed = time.perf_counter() - started
    print(render_table(rows, "normalized_l2"))
    print()
    print(render_table(rows, "hamming"))
    print(f"\nlambda mode: {args.lam}; runs: {args.runs}; elapsed {elapsed:.1f}s")
    payload = {
        "command": "synth",
        "config": {
            "m": args.m, "d": args.d, "n": args.n, "k": args.k, "overlap_fraction": args.overlap,
            "noise_variance": args.noise_var, "design_correlation": args.corr, "seed": args.seed,
        },
        "methods": args.methods,
        "runs": args.runs,
        "lambda_mode": args.lam,
        "cv_folds": args.cv_folds,
        "rows": [r.to_dict() for r in rows],
    }
    if args.out:
        io.save_json(payload, args.out)
    if args.csv:
        _write_csv(args.csv, [rec for r in rows for rec in r.per_run])
    return EXIT_FATAL if any(r.runs == 0 for r in rows) else EXIT_OK


def _bench_real(args):
    parse_lambda_mode(args.lam)
    rows = run_realdata(
        args.manifest, args.methods, args.split, args.lam, args.noise_var, args.standardize, args.seed
    )
    width = max(len(r.method) for r in rows)
    print(f"{'method':<{width}}  test RMSE")
    for r in rows:
        text = f"{r.rmse:.4f}" if r.runs else f"failed ({r.per_run[0]['error']})"
        print(f"{r.method:<{width}}  {text}")
    payload = {
        "command": "real",
        "manifest": str(args.manifest),
        "split": args.split,
        "lambda_mode": args.lam,
        "rows": [r.to_dict() for r in rows],
    }
    if args.out:
        io.save_json(payload, args.out)
    if args.csv:
        _write_csv(args.csv, [rec for r in rows for rec in r.per_run])
    return EXIT_FATAL if all(r.runs == 0 for r in rows) else EXIT_OK


def _bench_export(args):
    if len(args.k) != 1:
        raise ValueError("export takes a single --k")
    cfg = SyntheticConfig(args.m, args.d, args.n, args.k[0], args.overlap, args.noise_var, args.corr, args.seed)
    ds, truth = generate_synthetic(cfg)
    path = io.export_dataset(ds, args.out_dir, args.name, truth)
    print(path)
    return EXIT_OK


def bench_parser():
    p = _Parser(prog="bench", description="Synthetic and real-data benchmarks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="synthetic benchmark")
    _add_synth_args(s)
    s.add_argument("--runs", type=int, default=20)
    s.add_argument("--methods", type=_methods, default=["scc", "gl", "glsls", "pfc", "dlr"])
    s.add_argument("--lambda", dest="lam", default="cv", help="'cv' or 'fixed:<value>'")
    s.add_argument("--cv-folds", type=int, default=1, help="1 = single 20%% holdout")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out")
    s.add_argument("--csv", help="write per-run metrics here")
    s.set_defaults(handler=_bench_synth)

    r = sub.add_parser("real", help="real-data benchmark from a manifest")
    r.add_argument("--manifest", required=True)
    r.add_argument("--split", default="0.75", help="fraction, row count, or 'all'")
    r.add_argument("--methods", type=_methods, default=["scc", "gl"])
    r.add_argument("--lambda", dest="lam", default="cv")
    r.add_argument("--noise-var", type=float, default=1.0, help="ridge weight of the second step")
    r.add_argument("--standardize", action="store_true")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out")
    r.add_argument("--csv")
    r.set_defaults(handler=_bench_real)

    e = sub.add_parser("export", help="write a synthetic draw as CSV files plus a manifest")
    _add_synth_args(e)
    e.add_argument("--out-dir", required=True)
    e.add_argument("--name", default="synthetic")
    e.set_defaults(handler=_bench_export)
    return p


def bench_main(argv=None):
    try:
        args = bench_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    return _run(args.handler, args)


# --- theory ---------------------------------------------------------------


def _theory_thm41(args):
    from .theory import thm41_bound_report, thm41_example

    X, hat, bar = thm41_example(args.d)
    reports = {
        "mismatched": thm41_bound_report(X, hat, bar, args.lam, args.sigma2, args.trials, args.seed),
        "exact": thm41_bound_report(X, bar, bar, args.lam, args.sigma2, args.trials, args.seed),
    }
    print(f"{'case':<11} {'omega':>10} {'lower':>10} {'excess':>10} {'upper':>10} {'stderr':>9}  status")
    for name, r in reports.items():
        print(
            f"{name:<11} {r.mismatch_omega:10.5f} {r.lower:10.5f} {r.excess:10.5f} "
            f"{r.upper:10.5f} {r.mc_stderr:9.5f}  {r.message()}"
        )
    if args.out:
        io.save_json({k: v.to_dict() for k, v in reports.items()}, args.out)
    return EXIT_OK


def _theory_thm42(args):
    from .model import SolverConfig
    from .theory import sparse_diagonal_truth, thm42_consistency_sweep

    if not 1 <= args.s <= args.d:
        raise ValueError("need 1 <= s <= d")
    X = np.random.default_rng(args.seed).standard_normal((args.n, args.d))
    sweep = thm42_consistency_sweep(
        sparse_diagonal_truth(args.d, args.s), X, args.m_grid, range(args.seeds), SolverConfig(),
        sigma2=args.sigma2,
    )
    print(f"{'m':>6} {'median discrepancy':>20}")
    for m, med in zip(sweep.m_grid, sweep.medians):
        print(f"{m:>6} {med:20.6f}")
    print("strictly decreasing" if sweep.strictly_decreasing else "NOT strictly decreasing")
    if args.out:
        io.save_json(sweep.to_dict(), args.out)
    return EXIT_OK


def _theory_ident(args):
    from .theory import identifiability_examples, identifiability_report

    out = {}
    print(f"{'example':<15} {'alpha':>7} {'beta':>8} {'product':>8}  identifiable")
    for name, decomp in identifiability_examples(args.d).items():
        r = identifiability_report(decomp)
        out[name] = r.to_dict()
        print(f"{name:<15} {r.alpha:7.3f} {r.beta:8.4f} {r.product:8.4f}  {r.identifiable}")
    if args.out:
        io.save_json(out, args.out)
    return EXIT_OK


def theory_parser():
    p = _Parser(prog="theory", description="Numerical checks of the theory.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("thm41", help="prediction-risk sandwich on the identity-design example")
    a.add_argument("--d", type=int, default=5)
    a.add_argument("--trials", type=int, default=100_000)
    a.add_argument("--seed", type=int, default=1)
    a.add_argument("--lam", type=float, default=0.25)
    a.add_argument("--sigma2", type=float, default=0.25)
    a.add_argument("--out")
    a.set_defaults(handler=_theory_thm41)

    b = sub.add_parser("thm42", help="consistency trend of the leave-one-out covariance")
    b.add_argument("--m-grid", type=_ints, default=[10, 50, 200])
    b.add_argument("--d", type=int, default=32)
    b.add_argument("--n", type=int, default=16)
    b.add_argument("--s", type=int, default=4)
    b.add_argument("--seeds", type=int, default=10)
    b.add_argument("--sigma2", type=float, default=0.25)
    b.add_argument("--seed", type=int, default=0, help="design seed")
    b.add_argument("--out")
    b.set_defaults(handler=_theory_thm42)

    c = sub.add_parser("ident", help="identifiability quantities of the shipped examples")
    c.add_argument("--d", type=int, default=16)
    c.add_argument("--out")
    c.set_defaults(handler=_theory_ident)
    return p


def theory_main(argv=None):
    try:
        args = theory_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    return _run(args.handler, args)


# --- oracle ---------------------------------------------------------------


def _oracle_check(args):
    from .oracles import run_oracle_suite

    results = run_oracle_suite(args.instances, args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<9} max deviation {r.max_deviation:.3e} (tol {r.tolerance:g})")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FATAL


def oracle_parser():
    p = _Parser(prog="oracle", description="Closed-form oracle equivalence checks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    c = sub.add_parser("check", help="compare the solvers with the identity-design closed forms")
    c.add_argument("--instances", type=int, default=50)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(handler=_oracle_check)
    return p


def oracle_main(argv=None):
    try:
        args = oracle_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    return _run(args.handler, args)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    tools = {"bench": bench_main, "theory": theory_main, "oracle": oracle_main}
    if not argv or argv[0] not in tools:
        print("usage: python -m jointsparse {bench,theory,oracle} ...", file=sys.stderr)
        return EXIT_INPUT
    return tools[argv[0]](argv[1:])


def _entry(fn):
    def run():
        sys.exit(fn())
    return run


bench = _entry(bench_main)
theory = _entry(theory_main)
oracle = _entry(oracle_main)
