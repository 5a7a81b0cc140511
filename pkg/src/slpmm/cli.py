"""Command-line front end.

Exit codes: 0 success, 1 self-test failure, 2 configuration error,
3 solver failure, 4 I/O error.
"""

import argparse
import glob
import json
import logging
import os
import sys

import numpy as np

from slpmm.config import ConfigError, ExperimentConfig
from slpmm.core import estimate_expectations
from slpmm.harness import (build_problem, collect_gaps, emit_plotdata, median_rate,
                           run_experiment)

EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4


def _seed_list(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _load_config(args):
    if args.config is None:
        if args.family is None:
            raise ConfigError("either --config or --family is required")
        cfg = ExperimentConfig(args.family, solver={"iterations": 1000})
    else:
        cfg = ExperimentConfig.load(args.config)
    seeds = None
    if getattr(args, "seeds", None) is not None:
        seeds = args.seeds
    elif getattr(args, "seed", None) is not None:
        seeds = [args.seed]
    return cfg.with_overrides(seeds=seeds, output=getattr(args, "out", None),
                              family=args.family,
                              deterministic_time=True if getattr(args, "deterministic_time", False) else None,
                              iterations=getattr(args, "iterations", None))


def cmd_run(args):
    cfg = _load_config(args)
    summaries = run_experiment(cfg)
    for s in summaries:
        if s["status"] == "ok":
            v = s.get("validation", {})
            print(f"seed {s['seed']}: K={s['K']} f_hat={v.get('f')} "
                  f"max g_hat={max(v.get('g', [float('nan')]))}")
        else:
            print(f"seed {s['seed']}: FAILED at k={s.get('k')}: {s['error']}")
    return EXIT_SOLVER if any(s["status"] != "ok" for s in summaries) else EXIT_OK


def cmd_validate(args):
    cfg = _load_config(args)
    problem = build_problem(cfg.family, cfg.problem_params())
    if os.path.exists(args.point):
        x = np.loadtxt(args.point, delimiter=",", ndmin=1)
    else:
        x = np.array([float(v) for v in args.point.split(",")])
    if x.shape != (problem.n,):
        raise ConfigError(f"point has {x.size} entries, problem dimension is {problem.n}")
    if not problem.feasible_set.contains(x):
        raise ConfigError("point is not in the feasible set")
    full = args.samples == "full"
    samples = len(problem.full_pass()) if full else int(args.samples)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    est = estimate_expectations(problem, x, samples, seed, full_pass=full)
    print(json.dumps(est.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_rate(args):
    paths = []
    for d in args.summaries:
        paths += sorted(glob.glob(os.path.join(d, "summary_seed*.json"))) if os.path.isdir(d) else [d]
    if args.config is not None:
        base = _load_config(args)
        for K in args.k_values:
            out = os.path.join(base.output, f"K{K}")
            run_experiment(base.with_overrides(output=out, iterations=K))
            paths += sorted(glob.glob(os.path.join(out, "summary_seed*.json")))
    by_k = collect_gaps(paths, args.metric)
    slope, pts = median_rate(by_k)
    for K, g in pts:
        print(f"K={K:>8d}  median gap={g:.6g}  (n={len(by_k[K])})")
    print(f"slope={slope:.4f}")
    return EXIT_OK


def cmd_plotdata(args):
    traces = sorted(glob.glob(os.path.join(args.run, "trace_seed*.csv")))
    if not traces:
        raise FileNotFoundError(f"no trace files in {args.run}")
    meta_path = os.path.join(args.run, "instance.json")
    reference, epoch = None, None
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
        reference = meta.get("optimal_value")
        if meta.get("name") == "np":
            big = max(meta["N0"], meta["N1"])
            batch = meta["batch_positive"] if meta["N0"] >= meta["N1"] else meta["batch_negative"]
            epoch = batch / big
    for p in emit_plotdata(traces, args.out or os.path.join(args.run, "plot"),
                           reference=reference, epoch_per_iteration=epoch):
        print(p)
    return EXIT_OK


def cmd_selftest(args):
    from slpmm.selftest import run_selftest
    return EXIT_OK if run_selftest(trials=args.trials) else EXIT_SELFTEST


def build_parser():
    parser = argparse.ArgumentParser(prog="slpmm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds=True):
        p.add_argument("--config", help="YAML experiment configuration")
        p.add_argument("--family", choices=["np", "qcqp", "ssd"])
        if seeds:
            p.add_argument("--seed", type=int)
            p.add_argument("--seeds", type=_seed_list, help="comma-separated seeds")
        p.add_argument("--out", help="output directory")
        p.add_argument("--deterministic-time", action="store_true",
                       help="write zero wall times so outputs are byte-reproducible")

    p = sub.add_parser("run", help="execute an experiment")
    common(p)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="Monte-Carlo check of a point")
    common(p)
    p.add_argument("--point", required=True, help="comma-separated vector or CSV file")
    p.add_argument("--samples", default="100000", help="sample count or 'full'")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("rate", help="fit the log-log slope of objective gaps")
    common(p)
    p.add_argument("summaries", nargs="*", default=[], help="run directories or summary files")
    p.add_argument("--iterations", dest="k_values", type=lambda s: [int(v) for v in s.split(",")],
                   default=[100, 400, 1600], help="K values to run when --config is given")
    p.add_argument("--metric", default="objective_gap_exact",
                   choices=["objective_gap_exact", "objective_gap_mc"])
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("plotdata", help="emit long-format plot files for a run")
    p.add_argument("run", help="run output directory")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("selftest", help="run the invariant suites")
    p.add_argument("--trials", type=int, default=200)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # ConfigError and the data-file ParseError are both ValueErrors
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, ArithmeticError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
