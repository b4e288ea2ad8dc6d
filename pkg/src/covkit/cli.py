"""``covkit`` command line: eval, sample, check, demo, bench.

Exit codes: 0 success, 1 a check failed, 2 bad input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .core.rng import make_rng
from .serialization import ModelFileError, load_model, load_points

EXIT_OK, EXIT_CHECK, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _json_safe(v):
    """Replace non-finite floats by strings so the output stays valid JSON."""
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, np.ndarray):
        return _json_safe(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def dumps_json(obj) -> str:
    return json.dumps(_json_safe(obj), indent=2, allow_nan=False) + "\n"


def _cell(v) -> str:
    f = float(v)
    return "" if not math.isfinite(f) else repr(f)


def table_csv(columns: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _require_seed(args):
    if args.seed is None:
        raise InputError(f"'{args.command}' draws random numbers; pass --seed")


# --------------------------------------------------------------------------
# commands


def cmd_eval(args) -> int:
    if args.points is None:
        raise InputError("eval needs --points")
    model = load_model(args.model)
    x = load_points(args.points, model.dim)
    rep = model.evaluate(x)
    n = x.shape[0]
    value = np.broadcast_to(np.asarray(rep.value, dtype=float), (n,))
    terms = {k: np.broadcast_to(np.asarray(v, dtype=float), (n,)) for k, v in rep.terms.items()}
    se = None if rep.std_error is None else np.broadcast_to(np.asarray(rep.std_error, dtype=float), (n,))
    coords = [f"x{i}" for i in range(model.dim)]
    if args.format == "csv":
        cols = coords + ["log_density"] + list(terms) + (["std_error"] if se is not None else [])
        rows = [list(x[i]) + [value[i]] + [t[i] for t in terms.values()] + ([se[i]] if se is not None else []) for i in range(n)]
        _emit(table_csv(cols, rows), args.out)
    else:
        out = {"model": model.kind, "formula": rep.formula, "dim": model.dim, "points": x, "log_density": value, "terms": terms}
        if se is not None:
            out["std_error"] = se
        _emit(dumps_json(out), args.out)
    return EXIT_OK


def cmd_sample(args) -> int:
    _require_seed(args)
    model = load_model(args.model)
    if model.sample is None:
        raise InputError(f"model type {model.kind!r} has no sampler")
    x = np.asarray(model.sample(args.samples, make_rng(args.seed)), dtype=float)
    if args.format == "csv":
        _emit(table_csv([f"x{i}" for i in range(model.dim)], x), args.out)
    else:
        _emit(dumps_json({"model": model.kind, "seed": args.seed, "samples": x}), args.out)
    return EXIT_OK


def cmd_check(args) -> int:
    _require_seed(args)
    model = load_model(args.model)
    checks = model.checks(args.samples, make_rng(args.seed))
    ok = all(c.passed for c in checks)
    out = {"model": model.kind, "seed": args.seed, "passed": ok, "checks": [c.as_dict() for c in checks]}
    if not ok:
        out["failed"] = [c.name for c in checks if not c.passed]
    _emit(dumps_json(out), args.out)
    for c in checks:
        if not c.passed:
            print(f"check failed: {c.name}", file=sys.stderr)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_demo(args) -> int:
    from .demo import DEMOS, run_demo

    _require_seed(args)
    if args.name not in DEMOS:
        raise InputError(f"unknown demo {args.name!r}; choose from {', '.join(DEMOS)}")
    if args.out is None:
        raise InputError("demo writes several files; pass --out DIRECTORY")
    report, results = run_demo(args.name, args.seed, n_norm=args.samples)
    files = {"report.json": dumps_json(report)}
    for r in results:
        files[f"samples_{r.kind}.csv"] = table_csv(["x", "y"], r.samples)
        if r.heatmap is not None:
            files[f"heatmap_{r.kind}.csv"] = table_csv(["x", "y", "log_density"], r.heatmap)
        if r.manifold is not None:
            files[f"manifold_{r.kind}.csv"] = table_csv(["code", "x", "y", "log_density"], r.manifold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)
    for r in results:
        for f in r.failures:
            print(f"check failed: {r.kind}.{f}", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_CHECK


def cmd_bench(args) -> int:
    from .jacobians import bench_logdet

    dims = tuple(int(d) for d in args.dims.split(","))
    rows = bench_logdet(dims=dims, repetitions=args.repetitions, seed=0 if args.seed is None else args.seed)
    if args.format == "json":
        _emit(dumps_json({"rows": rows}), args.out)
    else:
        cols = ["strategy", "dim", "mean_ns", "rel_error"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r["strategy"], r["dim"], repr(r["mean_ns"]), repr(r["rel_error"])])
        _emit(buf.getvalue(), args.out)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="covkit", description="Change-of-variables density toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, model=True, fmt=("json", "csv")):
        if model:
            sp.add_argument("--model", required=True, help="model JSON file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None, help="output file (directory for demo); stdout if omitted")
        if fmt:
            sp.add_argument("--format", choices=fmt, default=fmt[0])

    sp = sub.add_parser("eval", help="log-density with per-term breakdown at given points")
    common(sp)
    sp.add_argument("--points", help="points file (JSON rows or CSV)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sample", help="draw samples from a model")
    common(sp)
    sp.add_argument("--samples", type=int, default=1000)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("check", help="run the model's invariant checks")
    common(sp, fmt=None)
    sp.add_argument("--samples", type=int, default=200_000, help="MC sample count for normalization")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("demo", help="four-way model demo with plot data")
    sp.add_argument("name", help="gauss4 or donut4")
    common(sp, model=False, fmt=None)
    sp.add_argument("--samples", type=int, default=200_000, help="MC sample count for normalization")
    sp.set_defaults(func=cmd_demo)

    sp = sub.add_parser("bench", help="log-determinant strategy benchmark")
    common(sp, model=False, fmt=("csv", "json"))
    sp.add_argument("--dims", default="2,4,8,16,32")
    sp.add_argument("--repetitions", type=int, default=5)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    if getattr(args, "samples", 1) is not None and getattr(args, "samples", 1) < 1:
        print("error: --samples must be positive", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (ModelFileError, InputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
