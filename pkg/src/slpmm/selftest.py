"""Quick invariant suites runnable from the command line."""

import numpy as np

from slpmm.core import Ball, Box, CappedSimplex, Simplex, check_convexity, seeded_stream
from slpmm.problems import (make_np_synthetic, make_qcqp, make_ssd_synthetic, np_oracle,
                            qcqp_oracle, ssd_oracle)
from slpmm.solver import linearized_augmented_lagrangian
from slpmm.subproblem import build_subproblem, phi_value


def _projection_checks(trials, rng):
    n = 6
    sets = [Ball(np.zeros(n), 1.5), Box(-np.ones(n), np.ones(n)), Simplex(n),
            CappedSimplex(np.full(n, 0.3))]
    worst = {"idempotence": 0.0, "nonexpansive": 0.0, "variational": 0.0, "membership": 0.0}
    for C in sets:
        for _ in range(trials):
            y, z = 3 * rng.standard_normal(n), 3 * rng.standard_normal(n)
            py, pz = C.project(y), C.project(z)
            worst["idempotence"] = max(worst["idempotence"], np.linalg.norm(C.project(py) - py))
            worst["nonexpansive"] = max(worst["nonexpansive"],
                                        np.linalg.norm(py - pz) - np.linalg.norm(y - z))
            w = C.random_point(rng)
            worst["variational"] = max(worst["variational"], (y - py) @ (w - py))
            worst["membership"] = max(worst["membership"], C.distance(py))
    return [("projection idempotence", worst["idempotence"] <= 1e-12, worst["idempotence"]),
            ("projection nonexpansiveness", worst["nonexpansive"] <= 1e-12, worst["nonexpansive"]),
            ("projection variational inequality", worst["variational"] <= 1e-10, worst["variational"]),
            ("projection membership", worst["membership"] <= 1e-12, worst["membership"])]


def _equivalence_check(trials, rng):
    worst = 0.0
    for _ in range(trials):
        n, p = 5, 3
        x_k = rng.standard_normal(n)
        lam = np.abs(rng.standard_normal(p))
        G, v0, V = rng.standard_normal(p), rng.standard_normal(n), rng.standard_normal((p, n))
        sigma, alpha = rng.uniform(0.1, 5), rng.uniform(0.1, 5)
        F = rng.standard_normal()
        d = build_subproblem(x_k, lam, G, v0, V, sigma, alpha, Ball(np.zeros(n), 10.0))
        diffs = []
        for _ in range(20):
            z = rng.standard_normal(n)
            al = linearized_augmented_lagrangian(z, lam, F, G, v0, V, x_k, sigma)
            diffs.append(alpha * phi_value(d, z) - al - 0.5 * alpha * (z - x_k) @ (z - x_k))
        diffs = np.array(diffs)
        worst = max(worst, np.ptp(diffs) / (1 + abs(diffs.mean())))
    return [("subproblem scaling equivalence", worst <= 1e-9, worst)]


def run_selftest(trials=200, seed=0, out=print):
    """Run every suite, print one line per check and return overall success."""
    rng = seeded_stream(seed, 0)
    results = []
    results += _projection_checks(trials, rng)
    results += _equivalence_check(max(1, trials // 10), rng)
    families = {
        "qcqp": qcqp_oracle(make_qcqp(10, 3, 2.0, seed=seed)),
        "np": np_oracle(make_np_synthetic(10, 200, 200, seed=seed)),
        "ssd": ssd_oracle(make_ssd_synthetic(6, 100, seed=seed, level_count=20)),
    }
    for name, prob in families.items():
        rep = check_convexity(prob, trials, seed)
        worst = max(rep.secant_violation, rep.subgradient_violation)
        results.append((f"{name} convexity and subgradient inequalities", rep.passed(), worst))
    ok = True
    for name, passed, worst in results:
        out(f"{'PASS' if passed else 'FAIL'}  {name}  (worst {worst:.3g})")
        ok &= bool(passed)
    return ok
