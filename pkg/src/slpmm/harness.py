"""Seeded replications, trace files, aggregation and rate fitting."""

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from slpmm.core import estimate_expectations
from slpmm.problems import (load_scenarios_csv, load_sparse_classification, make_np_synthetic,
                            make_qcqp, make_ssd_synthetic, np_oracle, qcqp_oracle, ssd_oracle)
from slpmm.solver import SolverError, slpmm_run

log = logging.getLogger(__name__)

TRACE_COLUMNS = ["k", "F_sample", "max_G_sample", "lambda_norm", "step_norm",
                 "subproblem_iters", "wall_time_s"]


def build_problem(family, params):
    """Instantiate a problem from family parameters (see ``FAMILY_DEFAULTS``)."""
    if family == "qcqp":
        return qcqp_oracle(make_qcqp(params["n"], params["p"], params["radius"],
                                     seed=params["data_seed"]))
    if family == "np":
        if params.get("path"):
            data = load_sparse_classification(params["path"], label_map=params.get("label_map"),
                                              tau=params["tau"],
                                              batch_fraction=params["batch_fraction"])
        else:
            data = make_np_synthetic(params["n"], params["n_pos"], params["n_neg"],
                                     params["separation"], params["tau"],
                                     seed=params["data_seed"],
                                     batch_fraction=params["batch_fraction"])
        return np_oracle(data, params["radius"])
    if family == "ssd":
        if params.get("path"):
            data = load_scenarios_csv(params["path"], level_count=params["level_count"],
                                      upper=params["upper"])
        else:
            data = make_ssd_synthetic(params["n"], params["scenarios"], seed=params["data_seed"],
                                      level_count=params["level_count"], subset_size=None,
                                      upper=params["upper"])
        if params.get("batch", 1) != 1:
            from dataclasses import replace
            data = replace(data, batch=params["batch"])
        return ssd_oracle(data)
    raise ValueError(f"unknown family {family!r}")


def _fmt(v):
    # shortest round-tripping representation, stable across runs
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def trace_rows(trace, deterministic_time=False):
    rows = []
    for s in trace.steps:
        rows.append([s.k, s.F, float(np.max(s.G)), s.lam_norm, s.step_norm, s.sub_iters,
                     0.0 if deterministic_time else s.wall_time])
    return rows


def write_trace_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        data = np.array([[float(c) for c in row] for row in rd]).reshape(-1, len(header))
    return header, data


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return [float(a) for a in v]
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def summarize(problem, trace, validation_samples, seed, deterministic_time=False):
    """Validation estimates and bound-check counters for one run."""
    K = len(trace)
    out = {"K": K, "alpha": trace.alpha, "sigma": trace.sigma, "seed": seed}
    if K == 0:
        out["x_avg"] = None
        return out
    x_avg = trace.averaged
    full = validation_samples == "full"
    samples = len(problem.full_pass()) if full else validation_samples
    est = estimate_expectations(problem, x_avg, samples, seed, full_pass=full)
    out["x_avg"] = [float(v) for v in x_avg]
    out["validation"] = est.to_dict()
    out["validation"]["full_pass"] = full
    ref = problem.reference_value()
    if ref is not None:
        out["reference_value"] = ref
        out["objective_gap_mc"] = est.f - ref
    if hasattr(problem, "exact_objective"):
        out["f_exact"] = problem.exact_objective(x_avg)
        out["g_exact"] = _jsonable(np.asarray(problem.exact_constraints(x_avg)))
        if ref is not None:
            out["objective_gap_exact"] = out["f_exact"] - ref
    out["bounds_online"] = {k: v.to_dict() for k, v in trace.check_bounds().items()}
    out["bounds_final"] = {k: v.to_dict() for k, v in trace.check_bounds(final=True).items()}
    out["subproblem_paths"] = {
        path: sum(1 for s in trace.steps if s.sub_path == path)
        for path in sorted({s.sub_path for s in trace.steps})}
    est_final = trace.estimates
    out["estimates"] = {"kappa_f": est_final.kappa_f, "kappa_g": est_final.kappa_g,
                        "nu_g": est_final.nu_g}
    if not deterministic_time:
        out["wall_time_s"] = float(sum(s.wall_time for s in trace.steps))
    return out


def run_replication(config, seed):
    """Run one seed; write its trace and summary.  Returns the summary."""
    problem = build_problem(config.family, config.problem_params())
    solver_cfg = config.solver_config(seed)
    trace_path = os.path.join(config.output, f"trace_seed{seed}.csv")
    summary_path = os.path.join(config.output, f"summary_seed{seed}.json")
    try:
        trace = slpmm_run(problem, solver_cfg)
    except SolverError as exc:
        summary = {"seed": seed, "status": "failed", "error": str(exc), "k": exc.k}
        if exc.trace is not None:
            write_trace_csv(trace_path, trace_rows(exc.trace, config.deterministic_time))
        write_json(summary_path, summary)
        return summary
    write_trace_csv(trace_path, trace_rows(trace, config.deterministic_time))
    summary = summarize(problem, trace, config.validation_samples, seed, config.deterministic_time)
    summary["status"] = "ok"
    write_json(summary_path, summary)
    return summary


def _replicate(args):
    config, seed = args
    return run_replication(config, seed)


def aggregate_traces(paths):
    """Across-seed means of every trace column, row by row.

    Traces cut short by a failure are excluded from rows they do not reach.
    """
    tables = [read_trace_csv(p)[1] for p in paths]
    K = max(t.shape[0] for t in tables)
    rows = []
    for k in range(K):
        present = [t[k] for t in tables if t.shape[0] > k]
        mean = np.mean(present, axis=0)
        mean[0] = k
        rows.append(list(mean))
    return rows


def run_experiment(config):
    """Run every seed of ``config`` and write traces, summaries and the
    aggregate.  Returns the list of per-seed summaries."""
    os.makedirs(config.output, exist_ok=True)
    with open(os.path.join(config.output, "config.yaml"), "w") as fh:
        fh.write(config.dumps())
    problem = build_problem(config.family, config.problem_params())
    write_json(os.path.join(config.output, "instance.json"), problem.metadata())

    jobs = [(config, s) for s in config.seeds]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            summaries = list(pool.map(_replicate, jobs))
    else:
        summaries = [_replicate(j) for j in jobs]

    ok = [s for s in summaries if s["status"] == "ok"]
    for s in summaries:
        if s["status"] != "ok":
            log.error("seed %s failed: %s", s["seed"], s["error"])
    if ok:
        paths = [os.path.join(config.output, f"trace_seed{s['seed']}.csv") for s in ok]
        agg = aggregate_traces(paths)
        rows = [[int(r[0])] + r[1:] for r in agg]
        write_trace_csv(os.path.join(config.output, "aggregate.csv"), rows)
    return summaries


def fit_rate(points):
    """Least-squares slope of ``log(error)`` against ``log(K)``."""
    points = list(points)
    if len(points) < 3:
        raise ValueError("need at least three (K, error) points")
    K = np.array([p[0] for p in points], dtype=float)
    err = np.array([p[1] for p in points], dtype=float)
    if np.any(err <= 0) or np.any(K <= 0):
        raise ValueError("iteration counts and errors must be positive")
    slope, _ = np.polyfit(np.log(K), np.log(err), 1)
    return float(slope)


def collect_gaps(summary_paths, metric="objective_gap_exact"):
    """``{K: [gap, ...]}`` from summary files (absolute values)."""
    by_k = {}
    for path in summary_paths:
        with open(path) as fh:
            s = json.load(fh)
        if s.get("status") != "ok" or metric not in s:
            continue
        by_k.setdefault(s["K"], []).append(abs(s[metric]))
    return by_k


def median_rate(by_k):
    pts = sorted((K, float(np.median(v))) for K, v in by_k.items())
    return fit_rate(pts), pts


def emit_plotdata(trace_paths, out_dir, reference=None, epoch_per_iteration=None,
                  labels=None):
    """Long-format ``series,k,value`` and ``series,time_s,value`` files.

    One series per trace column (prefixed by the trace label when there
    are several traces) plus, for several traces, pointwise means.
    Returns the paths written.
    """
    os.makedirs(out_dir, exist_ok=True)
    tables = [read_trace_csv(p) for p in trace_paths]
    if labels is None:
        labels = [os.path.splitext(os.path.basename(p))[0] for p in trace_paths]
    value_cols = [c for c in TRACE_COLUMNS if c not in ("k", "wall_time_s")]

    def series_rows(label, header, data):
        prefix = "" if len(tables) == 1 else f"{label}/"
        ix = {c: i for i, c in enumerate(header)}
        time = np.cumsum(data[:, ix["wall_time_s"]])
        by_k, by_t = [], []
        for c in value_cols:
            for r, t in zip(data, time):
                by_k.append([prefix + c, int(r[ix["k"]]), r[ix[c]]])
                by_t.append([prefix + c, t, r[ix[c]]])
        return by_k, by_t

    by_k, by_t = [], []
    for label, (header, data) in zip(labels, tables):
        a, b = series_rows(label, header, data)
        by_k += a
        by_t += b
    if len(tables) > 1:
        K = min(d.shape[0] for _, d in tables)
        header = tables[0][0]
        mean = np.mean([d[:K] for _, d in tables], axis=0)
        ix = {c: i for i, c in enumerate(header)}
        for c in value_cols:
            for r in mean:
                by_k.append(["mean/" + c, int(round(r[ix["k"]])), r[ix[c]]])

    paths = []
    for name, xname, rows in (("plot_by_iteration.csv", "k", by_k),
                              ("plot_by_time.csv", "time_s", by_t)):
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series", xname, "value"])
            for s, x, v in rows:
                w.writerow([s, _fmt(x), _fmt(v)])
        paths.append(path)
    if epoch_per_iteration is not None:
        path = os.path.join(out_dir, "plot_by_epoch.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series", "epoch", "value"])
            for s, k, v in by_k:
                w.writerow([s, _fmt(k * epoch_per_iteration), _fmt(v)])
        paths.append(path)
    path = os.path.join(out_dir, "reference.json")
    write_json(path, {"objective_reference": reference})
    paths.append(path)
    return paths
