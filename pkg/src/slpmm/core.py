"""Problem abstraction, feasible sets, configuration and run records.

A problem is an oracle bundle for

    min_{x in C} E[F(x, xi)]   s.t.   E[G_i(x, xi)] <= 0,  i = 1..p

exposing sampled values and subgradients.  Randomness flows exclusively
through :func:`seeded_stream`, so a run is a pure function of its seeds.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from slpmm import projections

FEAS_TOL = 1e-10

_MASK64 = (1 << 64) - 1

# stream-id namespaces, kept in the top bits so per-index ids never collide
SOLVER_STREAM = 0
VALIDATION_STREAM = 1 << 60
DATA_STREAM = 2 << 60
CHECK_STREAM = 3 << 60


class EvaluationError(ArithmeticError):
    """An oracle returned a non-finite value."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def seeded_stream(master_seed, stream_id):
    """Return an independent, reproducible generator for ``(seed, stream)``.

    Backed by the counter-based Philox bit generator keyed on the pair, so
    draws depend only on the key and the counter and are identical across
    platforms.  Distinct ``stream_id`` values give non-overlapping streams.
    """
    key = np.array([int(master_seed) & _MASK64, int(stream_id) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# --------------------------------------------------------------------------
# feasible sets

class FeasibleSet:
    """Base class for the simple convex sets C with exact projections."""

    kind = "abstract"

    def project(self, y):
        raise NotImplementedError

    def project_result(self, y):
        point = self.project(y)
        return projections.ProjectionResult(point, self.active(point))

    def active(self, x):
        return {}

    def distance(self, x):
        x = np.asarray(x, dtype=float)
        return float(np.linalg.norm(x - self.project(x)))

    def contains(self, x, tol=FEAS_TOL):
        return self.distance(x) <= tol

    def is_interior(self, x, margin=1e-12):
        return False

    @property
    def diameter(self):
        raise NotImplementedError

    def random_point(self, rng):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Ball(FeasibleSet):
    center: np.ndarray
    radius: float
    kind = "ball"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    def project(self, y):
        return projections.project_ball(y, self.center, self.radius)

    def active(self, x):
        return {"boundary": bool(np.linalg.norm(x - self.center) >= self.radius - FEAS_TOL)}

    def is_interior(self, x, margin=1e-12):
        return bool(np.linalg.norm(np.asarray(x) - self.center) < self.radius - margin)

    @property
    def diameter(self):
        return 2.0 * self.radius

    def random_point(self, rng):
        n = self.center.size
        d = rng.standard_normal(n)
        d /= np.linalg.norm(d)
        return self.center + self.radius * rng.random() ** (1.0 / n) * d

    def to_dict(self):
        return {"kind": self.kind, "center": self.center.tolist(), "radius": float(self.radius)}


@dataclass(frozen=True)
class Box(FeasibleSet):
    lower: np.ndarray
    upper: np.ndarray
    kind = "box"

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != upper.shape or np.any(lower > upper):
            raise ValueError("box needs lower <= upper of equal shape")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("box bounds must be finite")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def project(self, y):
        return projections.project_box(y, self.lower, self.upper)

    def active(self, x):
        return {"lower": x <= self.lower + FEAS_TOL, "upper": x >= self.upper - FEAS_TOL}

    def is_interior(self, x, margin=1e-12):
        x = np.asarray(x)
        return bool(np.all(x > self.lower + margin) and np.all(x < self.upper - margin))

    @property
    def diameter(self):
        return float(np.linalg.norm(self.upper - self.lower))

    def random_point(self, rng):
        return self.lower + rng.random(self.lower.size) * (self.upper - self.lower)

    def to_dict(self):
        return {"kind": self.kind, "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class Simplex(FeasibleSet):
    n: int
    kind = "simplex"

    def project(self, y):
        return projections.project_simplex(y)

    def active(self, x):
        return {"zero": x <= FEAS_TOL, "sum": True}

    @property
    def diameter(self):
        return math.sqrt(2.0)

    def random_point(self, rng):
        return rng.dirichlet(np.ones(self.n))

    def to_dict(self):
        return {"kind": self.kind, "n": int(self.n)}


@dataclass(frozen=True)
class CappedSimplex(FeasibleSet):
    upper: np.ndarray
    kind = "capped-simplex"

    def __post_init__(self):
        upper = np.asarray(self.upper, dtype=float)
        if np.any(upper < 0) or upper.sum() < 1.0:
            raise ValueError("capped simplex needs upper >= 0 and sum(upper) >= 1")
        object.__setattr__(self, "upper", upper)

    def project(self, y):
        return projections.project_capped_simplex(y, self.upper)

    def active(self, x):
        return {"zero": x <= FEAS_TOL, "cap": x >= self.upper - FEAS_TOL, "sum": True}

    @property
    def diameter(self):
        # bound of the enclosing simplex
        return math.sqrt(2.0)

    def random_point(self, rng):
        return self.project(rng.dirichlet(np.ones(self.upper.size)))

    def to_dict(self):
        return {"kind": self.kind, "upper": self.upper.tolist()}


def feasible_set_from_dict(d):
    kind = d["kind"]
    if kind == "ball":
        return Ball(np.asarray(d["center"], dtype=float), float(d["radius"]))
    if kind == "box":
        return Box(d["lower"], d["upper"])
    if kind == "simplex":
        return Simplex(int(d["n"]))
    if kind == "capped-simplex":
        return CappedSimplex(d["upper"])
    raise ValueError(f"unknown feasible set kind {kind!r}")


# --------------------------------------------------------------------------
# problems

class StochasticProblem:
    """Oracle bundle for an expectation-constrained convex program.

    Subclasses set ``n``, ``p`` and ``feasible_set`` and implement
    :meth:`sample` and :meth:`evaluate`.  Scenarios are opaque to the
    solver.  Oracles must not mutate state, so one instance can be shared
    between threads.
    """

    n: int
    p: int
    feasible_set: FeasibleSet
    name = "problem"

    def sample(self, rng):
        """Draw one scenario from ``rng``."""
        raise NotImplementedError

    def sample_batch(self, rng, size):
        """Draw ``size`` scenarios; must consume ``rng`` exactly like
        ``size`` successive calls to :meth:`sample`."""
        return [self.sample(rng) for _ in range(size)]

    def evaluate(self, x, scenario):
        """Return ``(F, G, v0, V)`` at ``(x, scenario)``.

        ``G`` has shape ``(p,)``, ``v0`` shape ``(n,)`` and ``V`` shape
        ``(p, n)`` with rows the constraint subgradients.
        """
        raise NotImplementedError

    def values(self, x, scenario):
        F, G, _, _ = self.evaluate(x, scenario)
        return F, G

    def values_batch(self, x, scenarios):
        """Objective and constraint values for a sequence of scenarios."""
        out = [self.values(x, s) for s in scenarios]
        F = np.array([o[0] for o in out], dtype=float)
        G = np.array([o[1] for o in out], dtype=float).reshape(len(out), self.p)
        return F, G

    def objective(self, x, scenario):
        return self.values(x, scenario)[0]

    def constraints(self, x, scenario):
        return self.values(x, scenario)[1]

    def objective_subgradient(self, x, scenario):
        return self.evaluate(x, scenario)[2]

    def constraint_subgradients(self, x, scenario):
        return self.evaluate(x, scenario)[3]

    def full_pass(self):
        """Scenarios whose uniform average is the exact expectation, or
        ``None`` if the distribution has no small finite support."""
        return None

    def initial_point(self):
        zero = np.zeros(self.n)
        if self.feasible_set.contains(zero):
            return zero
        return self.feasible_set.project(zero)

    def reference_value(self):
        """Known optimal objective value, if the family provides one."""
        return None

    def metadata(self):
        return {"name": self.name, "n": self.n, "p": self.p,
                "feasible_set": self.feasible_set.to_dict()}


@dataclass(frozen=True)
class Estimate:
    """Monte-Carlo (or exact full-pass) estimate of f(x) and g(x)."""

    f: float
    g: np.ndarray
    f_stderr: float
    g_stderr: np.ndarray
    samples: int

    def to_dict(self):
        return {"f": float(self.f), "g": [float(v) for v in self.g],
                "f_stderr": float(self.f_stderr),
                "g_stderr": [float(v) for v in self.g_stderr],
                "samples": int(self.samples)}


def _check_finite(F, G, offset):
    bad = ~np.isfinite(F) | ~np.all(np.isfinite(G), axis=1)
    if bad.any():
        idx = offset + int(np.flatnonzero(bad)[0])
        raise EvaluationError(f"non-finite oracle value at scenario {idx}", index=idx)


def estimate_expectations(problem, x, samples, seed, stream_id=VALIDATION_STREAM,
                          full_pass=False, chunk=4096):
    """Sample means of F(x, xi) and G(x, xi) with standard errors.

    Scenarios are drawn i.i.d. from ``seeded_stream(seed, stream_id)``.
    With ``full_pass=True`` the problem's finite support is enumerated
    instead (``samples`` must then equal its size) and the standard errors
    are zero.  With a single sample the standard errors are NaN.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    x = np.asarray(x, dtype=float)
    if full_pass:
        scenarios = problem.full_pass()
        if scenarios is None:
            raise ValueError(f"{problem.name} has no finite support to enumerate")
        if samples != len(scenarios):
            raise ValueError(f"full pass has {len(scenarios)} scenarios, got samples={samples}")
        F, G = problem.values_batch(x, scenarios)
        _check_finite(F, G, 0)
        zeros = np.zeros(problem.p)
        return Estimate(float(F.mean()), G.mean(axis=0), 0.0, zeros, samples)

    rng = seeded_stream(seed, stream_id)
    # streaming first and second moments, chunked to bound memory
    f_sum = f_sq = 0.0
    g_sum = np.zeros(problem.p)
    g_sq = np.zeros(problem.p)
    f_shift = g_shift = None
    done = 0
    while done < samples:
        size = min(chunk, samples - done)
        F, G = problem.values_batch(x, problem.sample_batch(rng, size))
        _check_finite(F, G, done)
        if f_shift is None:
            f_shift, g_shift = F[0], G[0].copy()
        dF = F - f_shift
        dG = G - g_shift
        f_sum += dF.sum()
        f_sq += (dF * dF).sum()
        g_sum += dG.sum(axis=0)
        g_sq += (dG * dG).sum(axis=0)
        done += size
    f_mean = f_shift + f_sum / samples
    g_mean = g_shift + g_sum / samples
    if samples == 1:
        return Estimate(float(f_mean), g_mean, math.nan, np.full(problem.p, math.nan), 1)
    f_var = max(f_sq - f_sum * f_sum / samples, 0.0) / (samples - 1)
    g_var = np.maximum(g_sq - g_sum * g_sum / samples, 0.0) / (samples - 1)
    return Estimate(float(f_mean), g_mean, math.sqrt(f_var / samples),
                    np.sqrt(g_var / samples), samples)


@dataclass
class ConvexityReport:
    """Worst violations of the secant and subgradient inequalities."""

    trials: int
    secant_violation: float = 0.0
    subgradient_violation: float = 0.0

    def passed(self, tol=1e-9):
        return self.secant_violation <= tol and self.subgradient_violation <= tol


def check_convexity(problem, trials=1000, seed=0):
    """Random secant and subgradient-inequality tests of F and every G_i.

    Violations are reported as the largest amount by which
    ``F(tx + (1-t)y) <= tF(x) + (1-t)F(y)`` or ``F(y) >= F(x) + <v, y-x>``
    fails (componentwise for G), scaled by ``1 + |values|``.
    """
    rng = seeded_stream(seed, CHECK_STREAM)
    C = problem.feasible_set
    rep = ConvexityReport(trials)
    for _ in range(trials):
        x, y = C.random_point(rng), C.random_point(rng)
        t = rng.random()
        s = problem.sample(rng)
        Fx, Gx, v0, V = problem.evaluate(x, s)
        Fy, Gy = problem.values(y, s)
        Fm, Gm = problem.values(t * x + (1 - t) * y, s)
        sec = np.append(Fm - (t * Fx + (1 - t) * Fy), Gm - (t * Gx + (1 - t) * Gy))
        scale = 1.0 + np.abs(np.append(Fx, Gx)) + np.abs(np.append(Fy, Gy))
        rep.secant_violation = max(rep.secant_violation, float(np.max(sec / scale)))
        sub = np.append(Fx + v0 @ (y - x) - Fy, Gx + V @ (y - x) - Gy)
        rep.subgradient_violation = max(rep.subgradient_violation, float(np.max(sub / scale)))
    return rep


# --------------------------------------------------------------------------
# configuration and run state

POLICIES = ("explicit", "sqrtK")
SUBPROBLEM_SOLVERS = ("apg", "closed-form-p1")


@dataclass
class SolverConfig:
    """Parameters of one solver run.

    With ``policy="sqrtK"`` the proximal weight and penalty are set to
    ``sqrt(K)`` and ``1/sqrt(K)``, overriding ``alpha`` and ``sigma``.
    ``subset_size=None`` uses every constraint at every step.
    """

    iterations: int
    alpha: float = 1.0
    sigma: float = 1.0
    policy: str = "sqrtK"
    seed: int = 0
    objective_batch: int = 1
    constraint_batch: int = 1
    subset_size: Optional[int] = None
    subproblem_solver: str = "closed-form-p1"
    apg_tol: float = 1e-6
    apg_eta: float = 2.0
    apg_max_iters: int = 10000
    apg_strict: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.subproblem_solver not in SUBPROBLEM_SOLVERS:
            raise ValueError(f"subproblem_solver must be one of {SUBPROBLEM_SOLVERS}")
        for name in ("alpha", "sigma", "apg_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("objective_batch", "constraint_batch", "apg_max_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.subset_size is not None and self.subset_size < 1:
            raise ValueError("subset_size must be >= 1")
        if not self.apg_eta > 1:
            raise ValueError("apg_eta must be > 1")

    @property
    def effective_alpha(self):
        if self.policy == "sqrtK":
            return math.sqrt(self.iterations) if self.iterations > 0 else 1.0
        return self.alpha

    @property
    def effective_sigma(self):
        if self.policy == "sqrtK":
            return 1.0 / math.sqrt(self.iterations) if self.iterations > 0 else 1.0
        return self.sigma

    def subset_for(self, p):
        m = p if self.subset_size is None else self.subset_size
        if m > p:
            raise ValueError(f"subset_size {m} exceeds constraint count {p}")
        return m


@dataclass
class IterateState:
    k: int
    x: np.ndarray
    lam: np.ndarray

    @classmethod
    def initial(cls, x0, p):
        return cls(0, np.array(x0, dtype=float), np.zeros(p))


@dataclass
class DiagnosticEstimates:
    """Running maxima standing in for the uniform bounds on subgradient
    norms and constraint values; they only ever grow."""

    kappa_f: float = 0.0
    kappa_g: float = 0.0
    nu_g: float = 0.0

    def update(self, v0, V, G):
        self.kappa_f = max(self.kappa_f, float(np.linalg.norm(v0)))
        if V.size:
            self.kappa_g = max(self.kappa_g, float(np.max(np.linalg.norm(V, axis=1))))
        self.nu_g = max(self.nu_g, float(np.linalg.norm(G)))

    def beta0(self, p, diameter):
        return self.nu_g + math.sqrt(p) * self.kappa_g * diameter

    def copy(self):
        return DiagnosticEstimates(self.kappa_f, self.kappa_g, self.nu_g)


@dataclass
class StepRecord:
    k: int
    F: float
    G: np.ndarray
    subset: np.ndarray
    x_next: np.ndarray
    lam_next: np.ndarray
    lam_norm: float          # ||lambda^k||, before the update
    step_norm: float         # ||x^{k+1} - x^k||
    lam_step_norm: float     # ||lambda^{k+1} - lambda^k||
    sub_iters: int
    sub_residual: float
    sub_path: str
    wall_time: float
    estimates: DiagnosticEstimates


@dataclass
class BoundSummary:
    """Counts of estimate-based bound violations over a run."""

    checked: int = 0
    violations: int = 0
    late_violations: int = 0
    max_slack_ratio: float = -math.inf

    def to_dict(self):
        return {"checked": self.checked, "violations": self.violations,
                "late_violations": self.late_violations,
                "max_slack_ratio": None if self.checked == 0 else float(self.max_slack_ratio)}


@dataclass
class RunTrace:
    """Everything a run produced.

    ``iterates`` holds ``x^0 .. x^K`` and ``multipliers`` ``lambda^0 ..
    lambda^K``; ``steps`` has one record per iteration.
    """

    config: SolverConfig
    alpha: float
    sigma: float
    iterates: list = field(default_factory=list)
    multipliers: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    estimates: DiagnosticEstimates = field(default_factory=DiagnosticEstimates)
    p: int = 0
    diameter: float = 0.0
    warmup: int = 10

    def __len__(self):
        return len(self.steps)

    @property
    def x_last(self):
        return self.iterates[-1]

    @property
    def averaged(self):
        """Averaged iterate, or ``None`` for an empty run."""
        if not self.steps:
            return None
        return averaged_iterate(self)

    def column(self, name):
        return np.array([getattr(s, name) for s in self.steps])

    def drift_bound(self, step, est):
        return self.sigma * est.beta0(self.p, self.diameter)

    def step_bound(self, step, est):
        """Step-length bound, or ``None`` when its parameter condition fails."""
        pk = len(step.subset)
        if 2 * self.alpha - pk * est.kappa_g ** 2 * self.sigma <= 0:
            return None
        return (est.kappa_f + math.sqrt(pk) * est.kappa_g * step.lam_norm
                + math.sqrt(pk) * est.nu_g * est.kappa_g * self.sigma) / self.alpha

    def check_bounds(self, final=False):
        """Evaluate the multiplier-drift and step-length checks.

        With ``final=True`` every step is tested against the end-of-run
        estimates instead of the estimates available at that step.  The
        drift check applies only to steps that used the full constraint set.
        """
        drift, stepb = BoundSummary(), BoundSummary()
        for s in self.steps:
            est = self.estimates if final else s.estimates
            if len(s.subset) == self.p:
                bound = self.drift_bound(s, est)
                _tally(drift, s.k, s.lam_step_norm, bound, 1e-9, self.warmup)
            bound = self.step_bound(s, est)
            if bound is not None:
                _tally(stepb, s.k, s.step_norm, bound, 1e-6, self.warmup)
        return {"lambda_drift": drift, "step_length": stepb}


def _tally(summary, k, value, bound, tol, warmup):
    summary.checked += 1
    ratio = value / bound if bound > 0 else (0.0 if value <= tol else math.inf)
    summary.max_slack_ratio = max(summary.max_slack_ratio, ratio)
    if value > bound + tol:
        summary.violations += 1
        if k >= warmup:
            summary.late_violations += 1


def averaged_iterate(trace):
    """Arithmetic mean of ``x^0 .. x^{K-1}``."""
    K = len(trace.steps)
    if K == 0:
        raise ValueError("averaged iterate of an empty trace is undefined")
    return _column_fsum(trace.iterates[:K]) / K


def _column_fsum(rows):
    # correctly rounded column sums
    arr = np.asarray(rows, dtype=float)
    return np.array([math.fsum(col) for col in arr.T])
