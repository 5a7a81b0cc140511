"""Euclidean projections onto the simple convex sets used by the solver.

Every function returns a fresh array and never modifies its input.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ProjectionResult:
    """A projected point together with the constraints that are tight there.

    ``active`` maps a constraint name to a boolean mask (or a bool for
    scalar constraints such as the ball boundary).
    """

    point: np.ndarray
    active: dict = field(default_factory=dict)


def project_ball(y, center, radius):
    """Project ``y`` onto the closed ball ``{z : ||z - center|| <= radius}``."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    y = np.asarray(y, dtype=float)
    center = np.broadcast_to(np.asarray(center, dtype=float), y.shape)
    d = y - center
    dist = np.linalg.norm(d)
    if dist <= radius:
        return y.copy()
    return center + (radius / dist) * d


def project_box(y, lower, upper):
    """Clamp ``y`` componentwise to ``[lower, upper]``."""
    y = np.asarray(y, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), y.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), y.shape)
    if np.any(lower > upper):
        bad = int(np.flatnonzero(lower > upper)[0])
        raise ValueError(f"empty box: lower[{bad}] > upper[{bad}]")
    return np.clip(y, lower, upper)


def _fix_sum(z, free):
    # push the rounding residual of sum(z) onto coordinates strictly inside
    # their bounds, where a tiny shift keeps feasibility
    resid = 1.0 - z.sum()
    if resid != 0.0 and free.any():
        z[free] += resid / free.sum()
    return z


def project_simplex(y):
    """Project ``y`` onto the unit simplex ``{z >= 0, sum(z) = 1}``.

    Sort-and-threshold: with ``u`` sorted in decreasing order, the support
    size ``rho`` is the largest ``j`` with ``u_j - (cumsum(u)_j - 1)/j > 0``
    and the result is ``max(y - theta, 0)``.  Ties at the threshold need no
    special handling since every tied entry maps to the same value.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("project_simplex expects a non-empty 1-d vector")
    u = np.sort(y)[::-1]
    cssv = np.cumsum(u) - 1.0
    ind = np.arange(1, y.size + 1)
    rho = np.count_nonzero(u - cssv / ind > 0)
    theta = cssv[rho - 1] / rho
    z = np.maximum(y - theta, 0.0)
    return _fix_sum(z, z > 0)


def _capped_mass(y, upper, theta):
    return np.clip(y - theta, 0.0, upper).sum()


def project_capped_simplex(y, upper):
    """Project ``y`` onto ``{z : sum(z) = 1, 0 <= z <= upper}``.

    The solution is ``clip(y - theta, 0, upper)`` where the total mass is a
    nonincreasing piecewise-linear function of ``theta`` with kinks at
    ``y_i`` and ``y_i - upper_i``.  The kinks are sorted, the crossing
    segment is located by bisection over them, and ``theta`` is then solved
    exactly on that segment.
    """
    y = np.asarray(y, dtype=float)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), y.shape)
    if np.any(upper < 0):
        raise ValueError("caps must be nonnegative")
    if upper.sum() < 1.0:
        raise ValueError(f"infeasible caps: sum(upper) = {upper.sum()} < 1")

    # at theta_lo every coordinate sits at min(y_i - theta, upper_i) >=
    # min(1, upper_i), so the mass is >= 1; at max(y) it is 0
    theta_lo = y.min() - 1.0
    kinks = np.concatenate([y, y - upper, [theta_lo]])
    kinks = np.unique(kinks[np.isfinite(kinks) & (kinks >= theta_lo)])

    lo, hi = 0, kinks.size - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _capped_mass(y, upper, kinks[mid]) >= 1.0:
            lo = mid
        else:
            hi = mid
    t0, t1 = kinks[lo], kinks[hi]
    h0, h1 = _capped_mass(y, upper, t0), _capped_mass(y, upper, t1)
    if h0 == h1:
        theta = t0
    else:
        theta = t0 + (h0 - 1.0) / (h0 - h1) * (t1 - t0)
    z = np.clip(y - theta, 0.0, upper)
    return _fix_sum(z, (z > 0) & (z < upper))
