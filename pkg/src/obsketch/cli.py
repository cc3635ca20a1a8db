"""Command-line entry point: ``obsketch <subcommand> ...``.

Every failure exits nonzero and prints one line ``error: <category>: <message>``
to stderr, where the category is machine-readable (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time

import numpy as np

from . import data_io, harness
from .complexity import estimate_mu
from .errors import ConfigError, ObsketchError
from .objectives import ObjectiveSpec
from .probes import measure_contraction_dilation
from .sketch import (
    SketchConfig,
    init,
    load_sketch,
    plan_budget,
    plan_theory,
    save_sketch,
)
from .solvers import SolverOptions, solve_l1, solve_logistic

EXIT_CODES = {
    "config": 2,
    "format": 3,
    "bad_magic": 3,
    "version": 3,
    "truncated": 3,
    "data": 4,
    "parse": 4,
    "incompatible": 5,
    "no_compression": 6,
    "undefined_ratio": 7,
    "io": 8,
    "value": 9,
}


def _emit(obj, path=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _finite_or_none(v: float):
    return v if math.isfinite(v) else None


# --- sketch ---------------------------------------------------------------

def _sketch_config(args, n: int, d: int) -> SketchConfig:
    if args.mode == "theory":
        return plan_theory(
            n, d, args.eps, args.delta, args.mu, C=args.C, c=args.c, s=args.s, seed=args.seed,
            allow_no_compression=args.allow_no_compression,
        )
    if args.rows is None:
        raise ConfigError("budget mode needs --rows")
    return plan_budget(
        n, d, args.rows, s=args.s, h_m=args.h_m, b=args.b, seed=args.seed,
        random_shift=args.random_shift, shift_k=args.shift_k, level0_share=args.level0_share,
    )


def cmd_sketch(args) -> int:
    transform = "l1" if args.objective == "l1" else "fold"
    d_feat = None
    if args.n is None or args.format == "svmlight":
        rows_in_file, d_feat = data_io.scan(args.input, args.format, args.label_column)
    else:
        rows_in_file = None
    first = next(data_io.iter_chunks(args.input, args.format, transform, args.label_column, args.intercept, chunk_rows=1, d=d_feat))
    d = first.shape[1]
    n = args.n if args.n is not None else rows_in_file
    config = _sketch_config(args, n, d)
    state = init(config)
    offset = args.row_offset
    for block in data_io.iter_chunks(args.input, args.format, transform, args.label_column, args.intercept, chunk_rows=args.chunk_rows, d=d_feat):
        state.update_rows(offset, block)
        offset += block.shape[0]
    save_sketch(state, args.output)
    if args.verbose:
        print(f"sketched rows [{args.row_offset}, {offset}) of n={n} into {config.rows} x {d}", file=sys.stderr)
    return 0


def cmd_merge(args) -> int:
    state = load_sketch(args.inputs[0])
    for path in args.inputs[1:]:
        state = state.merge(load_sketch(path))
    save_sketch(state, args.output)
    return 0


# --- solve ----------------------------------------------------------------

def cmd_solve(args) -> int:
    options = SolverOptions(max_iter=args.max_iter, restarts=args.restarts, seed=args.seed)
    if args.sketch:
        state = load_sketch(args.sketch)
        rows, w, normalizer = state.buckets, state.weights, state.config.n
    else:
        transform = "l1" if args.objective == "l1" else "fold"
        ds = data_io.load(args.input, args.format, args.label_column, args.intercept, transform)
        rows, w, normalizer = ds.rows, np.ones(ds.n), ds.n
    if args.objective == "l1":
        fit = solve_l1(rows, w, options)
    else:
        fit = solve_logistic(rows, w, lam=args.lam, options=options, normalizer=normalizer)
    out = {
        "objective_kind": args.objective,
        "lambda": args.lam,
        "beta": fit.beta,
        "objective": fit.objective,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "grad_norm": _finite_or_none(fit.grad_norm),
    }
    if args.evaluate:
        transform = "l1" if args.objective == "l1" else "fold"
        ds = data_io.load(args.evaluate, args.format, args.label_column, args.intercept, transform)
        spec = ObjectiveSpec("l1", 0.0, ds.n) if args.objective == "l1" else ObjectiveSpec.logistic(ds.n, args.lam)
        out["objective_full_data"] = spec.value(ds.rows, 1.0, fit.beta)
    _emit(out, args.output)
    return 0


# --- experiment -----------------------------------------------------------

def cmd_experiment(args) -> int:
    spec = harness.load_spec(args.spec)
    spec.seed = harness.resolve_seed(spec, args.seed)
    if args.workers is not None:
        spec.workers = args.workers
    outputs = dict(spec.outputs)
    for key in ("results", "summary", "svg"):
        val = getattr(args, key)
        if val:
            outputs[key] = val
    if "results" not in outputs:
        raise ConfigError("no results path: set outputs.results or pass --results")

    def progress(k, total, rec):
        if args.verbose:
            status = rec.error or f"ratio={rec.approx_ratio:.4g}"
            print(f"[{k}/{total}] {rec.method} size={rec.size} lam={rec.lam} {status}", file=sys.stderr)

    t0 = time.perf_counter()
    records = harness.run_experiment(spec, progress)
    harness.write_results(records, outputs["results"], include_timing=not args.no_timing)
    summary = harness.summarize(records)
    if "summary" in outputs:
        harness.write_summary(summary, outputs["summary"])
    if "svg" in outputs:
        with open(outputs["svg"], "w", encoding="utf-8") as fh:
            fh.write(harness.render_svg(summary, lam=spec.lambdas[0], log_y=not args.linear))
    errors = sum(1 for r in records if r.error)
    print(f"{len(records)} records ({errors} failed) in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return 0


# --- mu-estimate ----------------------------------------------------------

def cmd_mu_estimate(args) -> int:
    if args.lower_bound:
        X = data_io.gen_lower_bound(args.n, args.mu).rows
    else:
        X = data_io.load(args.input, args.format, args.label_column, args.intercept, "fold").rows
    est = estimate_mu(X, num_directions=args.directions, seed=args.seed, refine_steps=args.refine)
    _emit({
        "mu1_lb": _finite_or_none(est.mu1_lb),
        "mu2_lb": _finite_or_none(est.mu2_lb),
        "mu_lb": _finite_or_none(est.mu),
        "separable": math.isinf(est.mu),
        "directions_tried": est.directions_tried,
        "best_direction": est.best_direction,
    }, args.output)
    return 0


# --- generate -------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.kind == "synthetic":
        ds = data_io.gen_synthetic_heavy(args.n_half, args.d)
    elif args.kind == "lower_bound":
        ds = data_io.gen_lower_bound(args.n, args.mu)
    else:
        ds, _ = data_io.gen_l1_exact(args.n, args.d, args.seed)
    data_io.write(ds, args.output, args.format)
    return 0


# --- probe ----------------------------------------------------------------

def cmd_probe(args) -> int:
    X = data_io.load(args.input, args.format, args.label_column, args.intercept, "fold").rows
    n, d = X.shape
    if args.betas:
        betas = np.loadtxt(args.betas, delimiter=",", ndmin=2)
    else:
        betas = np.random.default_rng(args.seed).standard_normal((args.num_betas, d))
    if betas.shape[1] != d:
        raise ConfigError(f"betas have {betas.shape[1]} columns, data has {d}")
    config = _sketch_config(args, n, d)
    seeds = [args.seed + k for k in range(args.num_seeds)]
    report = measure_contraction_dilation(X, config, betas, seeds=seeds, band=(args.band_low, args.band_high))
    report.to_csv(args.output)
    inside = report.within_band()
    print(f"{int(inside.sum())}/{inside.size} directions with mean estimate in band", file=sys.stderr)
    return 0


# --- parser ---------------------------------------------------------------

def _add_input(p, required=True):
    p.add_argument("--input", "-i", required=required, help="data file")
    p.add_argument("--format", choices=data_io.FORMATS, default="dense_csv", help="input format (default dense_csv)")
    p.add_argument("--label-column", type=int, default=-1, help="label column for CSV input (default last)")
    p.add_argument("--no-intercept", dest="intercept", action="store_false", help="do not append a constant column")


def _add_sketch_flags(p):
    p.add_argument("--mode", choices=("budget", "theory"), default="budget")
    p.add_argument("--rows", type=int, help="target sketch rows (budget mode)")
    p.add_argument("--s", type=int, default=1, help="level-0 sub-tables")
    p.add_argument("--h-m", dest="h_m", type=int, default=3, help="number of levels below the uniform level")
    p.add_argument("--b", type=float, default=8.0, help="level branching factor")
    p.add_argument("--level0-share", type=float, default=0.5, help="fraction of the non-uniform budget for level 0")
    p.add_argument("--random-shift", action="store_true", help="randomly shrink level 0 by a power of the growth factor")
    p.add_argument("--shift-k", type=int, default=1)
    p.add_argument("--eps", type=float, default=0.25, help="theory mode accuracy")
    p.add_argument("--delta", type=float, default=0.1, help="theory mode failure probability")
    p.add_argument("--mu", type=float, default=2.0, help="theory mode complexity bound")
    p.add_argument("--C", type=float, default=1.0, help="theory mode bucket constant")
    p.add_argument("--c", type=float, default=1.0, help="theory mode level constant")
    p.add_argument("--allow-no-compression", action="store_true", help="theory mode: clamp levels to n instead of failing")
    p.add_argument("--seed", type=int, default=0, help="sketch seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obsketch",
        description="Oblivious multi-level sketches for logistic and l1 regression.",
        epilog=f"Environment: {harness.SEED_ENV} overrides the base seed of 'experiment' (a --seed flag wins over it). "
        "Errors print 'error: <category>: <message>' to stderr and exit nonzero.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sketch", help="sketch a data file (or a shard of it) in one pass")
    _add_input(p)
    _add_sketch_flags(p)
    p.add_argument("--objective", choices=("logistic", "l1"), default="logistic", help="row transform: fold labels or augment with the target")
    p.add_argument("--n", type=int, help="total rows of the full dataset when sketching a shard")
    p.add_argument("--row-offset", type=int, default=0, help="global index of the first row in this file")
    p.add_argument("--chunk-rows", type=int, default=8192)
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--verbose", "-v", action="store_true")
    p.set_defaults(func=cmd_sketch)

    p = sub.add_parser("merge", help="add sketches of disjoint shards")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("solve", help="minimize the objective on a sketch or a data file; prints JSON")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--sketch", help="sketch file")
    src.add_argument("--input", "-i", help="data file")
    p.add_argument("--format", choices=data_io.FORMATS, default="dense_csv")
    p.add_argument("--label-column", type=int, default=-1)
    p.add_argument("--no-intercept", dest="intercept", action="store_false")
    p.add_argument("--objective", choices=("logistic", "l1"), default="logistic")
    p.add_argument("--lam", type=float, default=0.0, help="variance-regularization weight (logistic)")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--evaluate", help="data file on which to also report the full objective")
    p.add_argument("--output", "-o", help="JSON output path (default stdout)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("experiment", help="run an approximation-ratio experiment from a YAML spec")
    p.add_argument("spec")
    p.add_argument("--seed", type=int, help=f"base seed (overrides {harness.SEED_ENV} and the YAML value)")
    p.add_argument("--workers", type=int)
    p.add_argument("--results")
    p.add_argument("--summary")
    p.add_argument("--svg")
    p.add_argument("--linear", action="store_true", help="linear y axis in the SVG")
    p.add_argument("--no-timing", action="store_true", help="write zero timings for byte-identical reruns")
    p.add_argument("--verbose", "-v", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("mu-estimate", help="lower bounds on the mu complexity; prints JSON")
    _add_input(p, required=False)
    p.add_argument("--lower-bound", action="store_true", help="use the built-in lower-bound instance")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--mu", type=float, default=16.0)
    p.add_argument("--directions", type=int, default=64)
    p.add_argument("--refine", type=int, default=0, help="coordinate-search rounds per direction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_mu_estimate)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("kind", choices=("synthetic", "lower_bound", "l1_exact"))
    p.add_argument("--n-half", type=int, default=20000, help="synthetic: rows per label")
    p.add_argument("--d", type=int, default=100)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--mu", type=float, default=16.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=data_io.FORMATS, default="dense_csv")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("probe", help="seed-averaged positive-part estimates; writes CSV")
    _add_input(p)
    _add_sketch_flags(p)
    p.add_argument("--betas", help="CSV with one direction per line (default: random Gaussian)")
    p.add_argument("--num-betas", type=int, default=20)
    p.add_argument("--num-seeds", type=int, default=100)
    p.add_argument("--band-low", type=float, default=0.5)
    p.add_argument("--band-high", type=float, default=3.0)
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_probe)
    return parser


def _category(exc: BaseException) -> str:
    if isinstance(exc, ObsketchError):
        return exc.category
    if isinstance(exc, OSError):
        return "io"
    return "value"


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ObsketchError, OSError, ValueError, IndexError, ArithmeticError) as exc:
        cat = _category(exc)
        print(f"error: {cat}: {exc}", file=sys.stderr)
        return EXIT_CODES.get(cat, 1)


if __name__ == "__main__":
    sys.exit(main())
