"""Command-line front end.

Exit codes: 0 success, 1 failed verification, 2 usage or input error.
"""

import argparse
import datetime
import logging
import sys

import numpy as np

from . import io
from .bench import COLUMNS, run_bench
from .cost import network_cost
from .knn import build_pool, sample_neighbors
from .network import NetworkSpec, TrainConfig, dgcnn_like_spec, init_params, train_synthetic
from .verify import check_theorem1, check_theorem2, feature_distance_map, weight_distribution_stats

logger = logging.getLogger("pointgcn")


class UsageError(Exception):
    pass


def _stamp(report, args):
    if not args.no_timestamp:
        report["generated_at"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    return report


def _emit_json(report, args):
    text = io.dump_json(report)
    if args.out:
        io.dump_json(report, args.out)
    else:
        sys.stdout.write(text)


def _load_spec(path):
    try:
        return NetworkSpec.from_dict(io.load_json(path))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _load_points(path):
    try:
        return io.read_xyz(path)
    except OSError as exc:
        raise UsageError(str(exc)) from None


def cmd_knn(args):
    X = _load_points(args.input)
    pool = build_pool(X, args.k, args.p, args.n)
    nbrs = sample_neighbors(pool, args.layer, args.seed, keep_self=args.keep_self)
    if args.out:
        io.write_index_csv(args.out, nbrs.indices)
    else:
        io.write_index_csv(sys.stdout, nbrs.indices)
    return 0


def cmd_cost(args):
    spec = _load_spec(args.spec)
    N = args.points or spec.points
    if N is None:
        raise UsageError("number of points unknown: pass --points or set 'points' in the spec file")
    report = network_cost(spec, N, bytes_per_scalar=args.bytes_per_scalar)
    out = _stamp(report.to_dict(), args)
    table = report.table()
    if args.out:
        io.dump_json(out, args.out)
        print(table)
    else:
        print(table, file=sys.stderr)
        sys.stdout.write(io.dump_json(out))
    return 0


def cmd_bench(args):
    if not args.points:
        raise UsageError("at least one point count is required")
    specs = {path: _load_spec(path) for path in args.spec} if args.spec else {"dgcnn-like": dgcnn_like_spec()}
    rows = run_bench(specs, args.points, repetitions=args.repetitions, warmup=args.warmup,
                     seed=args.seed, k_scaling=args.k_scaling, knn_method=args.knn_method,
                     parallel=args.parallel)
    io.write_table_csv(args.out or sys.stdout, rows, COLUMNS)
    return 0


def cmd_verify_thm1(args):
    rng = np.random.default_rng(args.seed)
    fixed = _load_points(args.input) if args.input else None
    results = []
    for p in range(args.pairs):
        X = fixed if fixed is not None else rng.uniform(-1, 1, size=(args.points, args.dim))
        i, j = (int(v) for v in rng.integers(0, len(X), size=2))
        rep = check_theorem1(X, i, j, args.k, args.m, args.sigma, args.samples, seed=args.seed * 1_000_003 + p)
        results.append(rep.to_dict())
    passes = sum(r["passed"] for r in results)
    collapse_cloud = rng.uniform(-1, 1, size=(max(2, args.points), 1))
    collapse = check_theorem1(collapse_cloud, 0, 1, 1, 1, args.sigma, args.samples, seed=args.seed)
    collapse_ok = collapse.passed and np.isclose(collapse.lower, collapse.upper, rtol=1e-12, atol=0)
    rate = passes / len(results) if results else 1.0
    report = {
        "pairs": len(results),
        "passes": passes,
        "pass_rate": rate,
        "min_pass_rate": args.min_pass_rate,
        "collapse_case": {**collapse.to_dict(), "lower_equals_upper": bool(collapse_ok)},
        "results": results,
        "passed": bool(rate >= args.min_pass_rate and collapse_ok),
    }
    _emit_json(_stamp(report, args), args)
    return 0 if report["passed"] else 1


def cmd_verify_thm2(args):
    rep = check_theorem2(args.trials, args.seed, args.max_n, args.max_d, args.max_m, args.max_k)
    _emit_json(_stamp(rep.to_dict(), args), args)
    return 0 if rep.passed else 1


def _network_params(args, spec):
    if args.params:
        try:
            return io.load_params(args.params)
        except OSError as exc:
            raise UsageError(str(exc)) from None
    return init_params(spec, args.seed)


def cmd_weights(args):
    if not (args.params or args.spec):
        raise UsageError("weights needs --params or --spec")
    params = io.load_params(args.params) if args.params else init_params(_load_spec(args.spec), args.seed)
    if args.layer is not None:
        names = [f"conv{args.layer}.theta", f"conv{args.layer}.phi"]
        missing = [n for n in names if n not in params]
        if missing:
            raise UsageError(f"no such layer {args.layer}")
        params = {n: params[n] for n in names}
    _emit_json(_stamp(weight_distribution_stats(params, bins=args.bins).to_dict(), args), args)
    return 0


def cmd_distance_map(args):
    spec = _load_spec(args.spec)
    X = _load_points(args.input)
    params = _network_params(args, spec)
    dist = feature_distance_map(spec, params, X, args.layer, args.anchor, seed=args.seed)
    coord_names = ["x", "y", "z"] if X.shape[1] == 3 else [f"x{c}" for c in range(X.shape[1])]
    columns = ["index", *coord_names, "distance"]
    rows = [{"index": i, **dict(zip(coord_names, map(float, X[i]))), "distance": float(dist[i])}
            for i in range(len(X))]
    io.write_table_csv(args.out or sys.stdout, rows, columns)
    return 0


def cmd_train(args):
    spec = _load_spec(args.spec)
    try:
        cfg = TrainConfig.from_dict(io.load_json(args.config)) if args.config else TrainConfig()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{args.config}: {exc}") from None
    result = train_synthetic(spec, cfg)
    if args.params_out:
        io.save_params(args.params_out, result["params"])
    report = {
        "mode": result["mode"],
        "runs": result["runs"],
        "mean_test_accuracy": result["mean_test_accuracy"],
        "var_test_accuracy": result["var_test_accuracy"],
        "spec": result["spec"].to_dict(),
        "config": cfg.__dict__,
    }
    _emit_json(_stamp(report, args), args)
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="report path (default: stdout)")
    common.add_argument("--no-timestamp", action="store_true", help="omit wall-clock timestamps")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pointgcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("knn", parents=[common], help="neighbor table for an XYZ cloud (CSV)")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--p", type=int, default=0, help="pool enlargement step")
    p.add_argument("--n", type=int, default=1, help="layers sharing the pool")
    p.add_argument("--layer", type=int, default=1)
    p.add_argument("--keep-self", action="store_true")
    p.set_defaults(func=cmd_knn)

    p = sub.add_parser("cost", parents=[common], help="multiply counts for a network spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--points", type=int)
    p.add_argument("--bytes-per-scalar", type=int, default=8)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("bench", parents=[common], help="time baseline vs accelerated forwards (CSV)")
    p.add_argument("--spec", action="append", help="network spec JSON (repeatable); default DGCNN-like")
    p.add_argument("--points", type=int, nargs="*", default=[512, 1024, 2048])
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--k-scaling", choices=["proportional", "fixed"], default="proportional")
    p.add_argument("--knn-method", choices=["fast", "exact"], default="fast")
    p.add_argument("--parallel", action="store_true", help="allow multi-threaded BLAS")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify-thm1", parents=[common], help="Monte-Carlo check of the distance bounds")
    p.add_argument("--input", help="XYZ cloud; random clouds when omitted")
    p.add_argument("--points", type=int, default=128)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--min-pass-rate", type=float, default=0.99)
    p.set_defaults(func=cmd_verify_thm1)

    p = sub.add_parser("verify-thm2", parents=[common], help="baseline vs shuffled equivalence sweep")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--max-n", type=int, default=256)
    p.add_argument("--max-d", type=int, default=16)
    p.add_argument("--max-m", type=int, default=32)
    p.add_argument("--max-k", type=int, default=20)
    p.set_defaults(func=cmd_verify_thm2)

    p = sub.add_parser("weights", parents=[common], help="weight distribution statistics")
    p.add_argument("--params", help="parameter blob")
    p.add_argument("--spec", help="spec to initialize parameters from when --params is absent")
    p.add_argument("--layer", type=int)
    p.add_argument("--bins", type=int, default=30)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("distance-map", parents=[common], help="per-point feature distances to an anchor (CSV)")
    p.add_argument("--input", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--params")
    p.add_argument("--layer", type=int, required=True)
    p.add_argument("--anchor", type=int, required=True)
    p.set_defaults(func=cmd_distance_map)

    p = sub.add_parser("train", parents=[common], help="train on synthetic shapes")
    p.add_argument("--spec", required=True)
    p.add_argument("--config")
    p.add_argument("--params-out")
    p.set_defaults(func=cmd_train)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, io.FormatError) as exc:
        print(f"pointgcn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, IndexError, KeyError) as exc:
        print(f"pointgcn {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
