"""The per-iteration proximal subproblem in reduced hinge-quadratic form.

Minimizing the linearized augmented Lagrangian plus ``(alpha/2)||x - x_k||^2``
over C is, after dividing by ``alpha``, the same as minimizing

    phi(x) = 1/2 sum_i [a_i^T x + b_i]_+^2 + 1/2 ||x||^2 + c^T x

over C, with

    a_i = sqrt(sigma/alpha) v_i
    b_i = lambda_i / sqrt(sigma alpha) + sqrt(sigma/alpha) (G_i - <v_i, x_k>)
    c   = v_0 / alpha - x_k
"""

import math
from dataclasses import dataclass

import numpy as np


class ConvergenceError(RuntimeError):
    """APG hit its iteration cap; carries the best point seen."""

    def __init__(self, message, x_best, residual, iters):
        super().__init__(message)
        self.x_best = x_best
        self.residual = residual
        self.iters = iters


@dataclass(frozen=True)
class SubproblemData:
    A: np.ndarray          # rows a_i, shape (p', n)
    b: np.ndarray          # shape (p',)
    c: np.ndarray          # shape (n,)
    feasible_set: object
    alpha: float
    sigma: float
    x_k: np.ndarray
    subset: np.ndarray

    @property
    def n(self):
        return self.c.size

    @property
    def size(self):
        return self.b.size


def build_subproblem(x_k, lam, G, v0, V, sigma, alpha, feasible_set, subset=None):
    """Coefficients of phi for the constraint rows in ``subset``.

    ``lam``, ``G`` and ``V`` are full-length (p entries / rows); ``subset``
    selects the rows that enter the subproblem (all of them by default).
    """
    if not (sigma > 0 and alpha > 0):
        raise ValueError("sigma and alpha must be positive")
    x_k = np.asarray(x_k, dtype=float)
    lam = np.asarray(lam, dtype=float)
    G = np.asarray(G, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    V = np.asarray(V, dtype=float).reshape(G.size, x_k.size)
    if np.any(lam < 0):
        raise ValueError("multipliers must be nonnegative")
    if subset is None:
        subset = np.arange(G.size)
    subset = np.asarray(subset, dtype=int)
    for name, arr in (("G", G), ("v0", v0), ("V", V), ("x_k", x_k), ("lambda", lam)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite {name} in subproblem construction")

    r = math.sqrt(sigma / alpha)
    Vs = V[subset]
    A = r * Vs
    b = lam[subset] / math.sqrt(sigma * alpha) + r * G[subset] - r * (Vs @ x_k)
    c = v0 / alpha - x_k
    return SubproblemData(A, b, c, feasible_set, float(alpha), float(sigma), x_k.copy(), subset)


def phi_value(d, x):
    h = np.maximum(d.A @ x + d.b, 0.0)
    return 0.5 * float(h @ h) + 0.5 * float(x @ x) + float(d.c @ x)


def phi_grad(d, x):
    # at a kink the hinge term contributes 0
    h = np.maximum(d.A @ x + d.b, 0.0)
    return d.A.T @ h + x + d.c


def closed_form_p1(d, margin=1e-12):
    """Stationary point of phi for a single constraint, if it is interior.

    Returns ``None`` when the point is not strictly inside C, in which case
    it need not be the constrained minimizer.
    """
    if d.size != 1:
        raise ValueError(f"closed form needs exactly one constraint row, got {d.size}")
    a, b1, c = d.A[0], d.b[0], d.c
    if -a @ c + b1 <= 0:
        x = -c
    else:
        w = b1 * a + c
        x = -w + (a @ w) / (1.0 + a @ a) * a
    if d.feasible_set.is_interior(x, margin):
        return x
    return None


def _descent_remainder(d, y, step):
    """``phi(y + step) - phi(y) - <grad phi(y), step>`` without cancellation.

    The quadratic part contributes ``||step||^2 / 2``; each hinge term is
    expanded by cases on the signs of ``u = a^T y + b`` and ``u + a^T step``.
    """
    u = d.A @ y + d.b
    w = d.A @ step
    v = u + w
    hinge = np.where(u >= 0,
                     np.where(v >= 0, 0.5 * w * w, -u * (0.5 * u + w)),
                     np.where(v >= 0, 0.5 * v * v, 0.0))
    return 0.5 * float(step @ step) + float(hinge.sum())


@dataclass(frozen=True)
class ApgResult:
    x: np.ndarray
    iters: int
    residual: float
    lipschitz: float
    backtracks: int


def apg_solve(d, x_start, tol=1e-6, eta=2.0, max_iters=10000, strict=False):
    """Accelerated projected gradient with backtracking for min_C phi.

    Starting from ``y^0 = x^0 = x_start`` and ``L_{-1} = 1``, step ``t``
    takes ``x^{t+1} = P_C(y^t - grad phi(y^t) / L_t)`` with the smallest
    ``L_t = L_{t-1} eta^i`` passing the quadratic upper-bound test, then
    ``y^{t+1} = x^{t+1} + t/(t+3) (x^{t+1} - x^t)``.  Stops at the first
    ``t`` with ``||y^t - x^{t+1}|| <= tol`` and returns ``x^{t+1}``.

    Non-strict mode lets ``L`` shrink once per step (to
    ``max(L_{t-1}/eta, 1)``) before backtracking, and restarts the momentum
    whenever the step direction opposes the previous move; without the
    restart the fluctuating ``L`` can sustain an oscillation that never
    meets ``tol``.  ``strict=True`` follows the listing exactly: ``L`` only
    grows and the momentum is never restarted.
    """
    if not (tol > 0 and eta > 1):
        raise ValueError("need tol > 0 and eta > 1")
    C = d.feasible_set
    x = np.asarray(x_start, dtype=float).copy()
    y = x.copy()
    L = 1.0
    phi_start = phi_value(d, x)
    best_x, best_res = x, math.inf
    backtracks = 0
    for t in range(max_iters):
        if not strict:
            L = max(L / eta, 1.0)
        gy = phi_grad(d, y)
        for _ in range(200):
            x_new = C.project(y - gy / L)
            diff = x_new - y
            dd = diff @ diff
            if _descent_remainder(d, y, diff) <= 0.5 * L * dd * (1.0 + 1e-12):
                break
            L *= eta
            backtracks += 1
        else:
            raise ConvergenceError("backtracking failed to find a valid step", x, math.inf, t)
        res = float(np.linalg.norm(diff))
        if res < best_res:
            best_x, best_res = x_new, res
        if res <= tol:
            # never return worse than the (feasible) start point
            if phi_value(d, x_new) > phi_start:
                x_new = np.asarray(x_start, dtype=float).copy()
            return ApgResult(x_new, t + 1, res, L, backtracks)
        y = x_new + t / (t + 3.0) * (x_new - x)
        x = x_new
    raise ConvergenceError(f"APG did not reach tol={tol} in {max_iters} iterations",
                           best_x, best_res, max_iters)
