"""Stochastic linearized proximal method of multipliers (outer loop)."""

import logging
import time

import numpy as np

from slpmm.core import (FEAS_TOL, SOLVER_STREAM, DiagnosticEstimates, IterateState,
                        RunTrace, StepRecord, averaged_iterate, seeded_stream)
from slpmm.subproblem import (ConvergenceError, apg_solve, build_subproblem,
                              closed_form_p1)

log = logging.getLogger(__name__)

__all__ = ["SolverError", "update_multipliers", "sample_constraint_subset",
           "linearized_augmented_lagrangian", "slpmm_step", "slpmm_run",
           "averaged_iterate"]


class SolverError(RuntimeError):
    """A step failed; ``trace`` holds everything computed before it."""

    def __init__(self, message, k, trace=None):
        super().__init__(message)
        self.k = k
        self.trace = trace


def update_multipliers(lam, sigma, G, V, dx):
    """``[lam + sigma (G + V dx)]_+`` componentwise."""
    lam = np.asarray(lam, dtype=float)
    G = np.asarray(G, dtype=float)
    V = np.asarray(V, dtype=float)
    dx = np.asarray(dx, dtype=float)
    if V.ndim != 2 or V.shape != (lam.size, dx.size) or G.shape != lam.shape:
        raise ValueError(f"dimension mismatch: lambda {lam.shape}, G {G.shape}, "
                         f"V {V.shape}, dx {dx.shape}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return np.maximum(lam + sigma * (G + V @ dx), 0.0)


def sample_constraint_subset(p, m, rng):
    """``m`` distinct indices out of ``range(p)``, uniformly without
    replacement and sorted; the full set when ``m == p`` (no draw)."""
    if not 1 <= m:
        raise ValueError("subset size must be >= 1")
    if m > p:
        raise ValueError(f"subset size {m} exceeds constraint count {p}")
    if m == p:
        return np.arange(p)
    return np.sort(rng.choice(p, size=m, replace=False))


def linearized_augmented_lagrangian(z, lam, F, G, v0, V, x_k, sigma, subset=None):
    """Linearized augmented Lagrangian at ``z`` for the sampled data.

    Restricting to ``subset`` drops the other constraint terms, including
    their share of ``||lambda||^2``.
    """
    if subset is not None:
        lam, G, V = lam[subset], G[subset], V[subset]
    dz = z - x_k
    h = np.maximum(lam + sigma * (G + V @ dz), 0.0)
    return F + v0 @ dz + (h @ h - lam @ lam) / (2.0 * sigma)


def _sample_oracles(problem, x, config, rng):
    # one scenario per step by default; mini-batches average the first
    # objective_batch (resp. constraint_batch) scenarios of one draw
    nb = max(config.objective_batch, config.constraint_batch)
    scenarios = problem.sample_batch(rng, nb) if nb > 1 else [problem.sample(rng)]
    evals = [problem.evaluate(x, s) for s in scenarios]
    bo, bc = config.objective_batch, config.constraint_batch
    F = float(np.mean([e[0] for e in evals[:bo]]))
    v0 = np.mean([e[2] for e in evals[:bo]], axis=0)
    G = np.mean([e[1] for e in evals[:bc]], axis=0)
    V = np.mean([e[3] for e in evals[:bc]], axis=0)
    return F, np.atleast_1d(G), v0, np.atleast_2d(V)


def slpmm_step(state, problem, config, rng, estimates=None):
    """One iteration: sample, build and solve the subproblem, update the
    multipliers.  Returns the next state and the step record.

    ``estimates`` (running bound estimates) is updated in place if given.
    """
    t0 = time.perf_counter()
    alpha, sigma = config.effective_alpha, config.effective_sigma
    x, lam = state.x, state.lam
    F, G, v0, V = _sample_oracles(problem, x, config, rng)
    for name, arr in (("F", F), ("G", G), ("v0", v0), ("V", V)):
        if not np.all(np.isfinite(arr)):
            raise SolverError(f"non-finite {name} at iteration {state.k}", state.k)
    if estimates is not None:
        estimates.update(v0, V, G)

    m = config.subset_for(problem.p)
    subset = sample_constraint_subset(problem.p, m, rng)
    d = build_subproblem(x, lam, G, v0, V, sigma, alpha, problem.feasible_set, subset)

    x_next, iters, resid, path = None, 0, 0.0, "apg"
    if config.subproblem_solver == "closed-form-p1" and d.size == 1:
        x_next = closed_form_p1(d)
        if x_next is not None:
            path = "closed-form"
    if x_next is None:
        try:
            res = apg_solve(d, x, tol=config.apg_tol, eta=config.apg_eta,
                            max_iters=config.apg_max_iters, strict=config.apg_strict)
        except ConvergenceError as exc:
            raise SolverError(f"subproblem failed at iteration {state.k}: {exc}", state.k) from exc
        x_next, iters, resid = res.x, res.iters, res.residual

    dx = x_next - x
    lam_next = lam.copy()
    lam_next[subset] = update_multipliers(lam[subset], sigma, G[subset], V[subset], dx)

    if not problem.feasible_set.contains(x_next, FEAS_TOL):
        raise SolverError(f"iterate left the feasible set at iteration {state.k}", state.k)
    assert np.all(lam_next >= 0)

    rec = StepRecord(
        k=state.k, F=F, G=G, subset=subset, x_next=x_next, lam_next=lam_next,
        lam_norm=float(np.linalg.norm(lam)), step_norm=float(np.linalg.norm(dx)),
        lam_step_norm=float(np.linalg.norm(lam_next - lam)), sub_iters=iters,
        sub_residual=resid, sub_path=path, wall_time=time.perf_counter() - t0,
        estimates=estimates.copy() if estimates is not None else DiagnosticEstimates(),
    )
    return IterateState(state.k + 1, x_next, lam_next), rec


def slpmm_run(problem, config, x0=None, callback=None):
    """Run ``config.iterations`` steps and return the full :class:`RunTrace`.

    Iteration ``k`` draws from ``seeded_stream(config.seed, k)``, so runs
    are reproducible and a run of length K is a prefix-consistent function
    of the seed.  ``x0`` defaults to the problem's initial point.
    """
    config.subset_for(problem.p)
    if x0 is None:
        x0 = problem.initial_point()
    x0 = np.asarray(x0, dtype=float)
    if not problem.feasible_set.contains(x0):
        raise ValueError("initial point is not in the feasible set")
    trace = RunTrace(config=config, alpha=config.effective_alpha, sigma=config.effective_sigma,
                     p=problem.p, diameter=problem.feasible_set.diameter)
    state = IterateState.initial(x0, problem.p)
    trace.iterates.append(state.x)
    trace.multipliers.append(state.lam)
    for k in range(config.iterations):
        rng = seeded_stream(config.seed, SOLVER_STREAM + k)
        try:
            state, rec = slpmm_step(state, problem, config, rng, trace.estimates)
        except SolverError as exc:
            exc.trace = trace
            raise
        trace.steps.append(rec)
        trace.iterates.append(state.x)
        trace.multipliers.append(state.lam)
        if callback is not None:
            callback(trace, rec)
    checks = trace.check_bounds()
    for name, summary in checks.items():
        if summary.late_violations:
            log.warning("%s: %d estimate-based bound violations after warm-up",
                        name, summary.late_violations)
    return trace


def run_fingerprint(trace):
    """Bytes of every deterministic quantity in a trace (wall time excluded)."""
    parts = [np.asarray(trace.iterates).tobytes(), np.asarray(trace.multipliers).tobytes()]
    for s in trace.steps:
        parts.append(np.array([s.F, s.lam_norm, s.step_norm, s.lam_step_norm,
                               s.sub_iters, s.sub_residual]).tobytes())
        parts.append(np.asarray(s.G).tobytes())
        parts.append(np.asarray(s.subset).tobytes())
    return b"".join(parts)

