"""Empirical Neyman-Pearson classification with logistic loss.

    min  f(x) = mean_i l(x^T a0_i)
    s.t. g(x) = mean_i l(-x^T a1_i) - tau <= 0

where a0 are the positive examples, a1 the negative ones and
l(y) = log(1 + exp(-y)).  A scenario is a pair of index batches, one per
class, drawn without replacement.
"""

import math
from dataclasses import dataclass

import numpy as np

from slpmm.core import DATA_STREAM, Ball, StochasticProblem, seeded_stream
from slpmm.problems.parsing import ParseError


def logistic_loss(y):
    """``log(1 + exp(-y))`` without overflow for large ``|y|``."""
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    pos = y >= 0
    out[pos] = np.log1p(np.exp(-y[pos]))
    out[~pos] = -y[~pos] + np.log1p(np.exp(y[~pos]))
    return out


def logistic_deriv(y):
    """Derivative of :func:`logistic_loss`, ``-1 / (1 + exp(y))``."""
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    pos = y >= 0
    e = np.exp(-y[pos])
    out[pos] = -e / (1.0 + e)
    out[~pos] = -1.0 / (1.0 + np.exp(y[~pos]))
    return out


@dataclass(frozen=True)
class NpClassificationData:
    positive: np.ndarray     # (N0, n)
    negative: np.ndarray     # (N1, n)
    tau: float = 1.0
    batch_positive: int = 1
    batch_negative: int = 1

    def __post_init__(self):
        pos = np.asarray(self.positive, dtype=float)
        neg = np.asarray(self.negative, dtype=float)
        if pos.ndim != 2 or neg.ndim != 2 or pos.shape[0] < 1 or neg.shape[0] < 1:
            raise ValueError("both classes need at least one example")
        if pos.shape[1] != neg.shape[1]:
            raise ValueError("classes have different feature dimensions")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
            raise ValueError("features must be finite")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not (1 <= self.batch_positive <= pos.shape[0] and 1 <= self.batch_negative <= neg.shape[0]):
            raise ValueError("batch sizes must lie between 1 and the class sizes")
        object.__setattr__(self, "positive", pos)
        object.__setattr__(self, "negative", neg)

    @property
    def n(self):
        return self.positive.shape[1]

    @property
    def sizes(self):
        return self.positive.shape[0], self.negative.shape[0]

    def with_batches(self, batch_positive, batch_negative):
        return NpClassificationData(self.positive, self.negative, self.tau,
                                    batch_positive, batch_negative)

    def with_default_batches(self, fraction=0.01):
        """Batches of ``fraction`` of each class (at least one example)."""
        n0, n1 = self.sizes
        return self.with_batches(max(1, round(fraction * n0)), max(1, round(fraction * n1)))


def make_np_synthetic(n=50, n_pos=2000, n_neg=2000, separation=1.0, tau=1.0, seed=0,
                      batch_fraction=0.01):
    """Two unit-covariance Gaussians with means ``+-separation * e_1``."""
    rng = seeded_stream(seed, DATA_STREAM)
    shift = np.zeros(n)
    shift[0] = separation
    pos = rng.standard_normal((n_pos, n)) + shift
    neg = rng.standard_normal((n_neg, n)) - shift
    return NpClassificationData(pos, neg, tau).with_default_batches(batch_fraction)


class NpProblem(StochasticProblem):
    """Stochastic oracle for the empirical NP problem over a ball."""

    name = "np"

    def __init__(self, data, radius=10.0):
        self.data = data
        self.n, self.p = data.n, 1
        self.radius = float(radius)
        self.feasible_set = Ball(np.zeros(data.n), self.radius)

    def sample(self, rng):
        n0, n1 = self.data.sizes
        i0 = rng.choice(n0, size=self.data.batch_positive, replace=False)
        i1 = rng.choice(n1, size=self.data.batch_negative, replace=False)
        return i0, i1

    def evaluate(self, x, scenario):
        i0, i1 = scenario
        x = np.asarray(x, dtype=float)
        P = self.data.positive[i0]
        N = self.data.negative[i1]
        m0 = P @ x
        m1 = -(N @ x)
        F = float(logistic_loss(m0).mean())
        G = np.array([logistic_loss(m1).mean() - self.data.tau])
        v0 = P.T @ logistic_deriv(m0) / len(i0)
        v1 = -(N.T @ logistic_deriv(m1)) / len(i1)
        return F, G, v0, v1[None, :]

    def values_batch(self, x, scenarios):
        x = np.asarray(x, dtype=float)
        l0 = logistic_loss(self.data.positive @ x)
        l1 = logistic_loss(-(self.data.negative @ x))
        F = np.array([l0[s[0]].mean() for s in scenarios])
        G = np.array([l1[s[1]].mean() for s in scenarios]) - self.data.tau
        return F, G[:, None]

    def values(self, x, scenario):
        F, G = self.values_batch(x, [scenario])
        return float(F[0]), G[0]

    def full_pass(self):
        """Single-example scenarios cycling through both classes.

        Length ``lcm(N0, N1)`` so every example of each class appears equally
        often; that is ``N`` when both classes have ``N`` examples.
        """
        n0, n1 = self.data.sizes
        L = n0 * n1 // math.gcd(n0, n1)
        t = np.arange(L)
        return list(zip((t % n0)[:, None], (t % n1)[:, None]))

    def full_objective(self, x):
        return float(logistic_loss(self.data.positive @ x).mean())

    def full_constraint(self, x):
        return float(logistic_loss(-(self.data.negative @ x)).mean() - self.data.tau)

    def full_gradients(self, x):
        x = np.asarray(x, dtype=float)
        P, N = self.data.positive, self.data.negative
        g0 = P.T @ logistic_deriv(P @ x) / P.shape[0]
        g1 = -(N.T @ logistic_deriv(-(N @ x))) / N.shape[0]
        return g0, g1

    def epoch_of(self, k):
        """Epochs consumed after ``k`` iterations (pass over the larger class)."""
        n0, n1 = self.data.sizes
        if n0 >= n1:
            return k * self.data.batch_positive / n0
        return k * self.data.batch_negative / n1

    def metadata(self):
        meta = super().metadata()
        n0, n1 = self.data.sizes
        meta.update(N0=n0, N1=n1, tau=self.data.tau, radius=self.radius,
                    batch_positive=self.data.batch_positive,
                    batch_negative=self.data.batch_negative)
        return meta


def np_oracle(data, radius=10.0):
    return NpProblem(data, radius)


def np_reference_optimum(problem, x0=None):
    """Deterministic full-batch solution of the NP problem.

    Sequential quadratic programming (scipy's SLSQP) on the exact finite sums
    with the ball as a smooth constraint ``||x||^2 <= R^2``.  Returns
    ``(x, f(x), g(x))``.
    """
    from scipy.optimize import minimize

    n = problem.n
    R2 = problem.radius ** 2
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
    cons = [
        {"type": "ineq", "fun": lambda x: -problem.full_constraint(x),
         "jac": lambda x: -problem.full_gradients(x)[1]},
        {"type": "ineq", "fun": lambda x: R2 - x @ x, "jac": lambda x: -2.0 * x},
    ]
    res = minimize(problem.full_objective, x0, jac=lambda x: problem.full_gradients(x)[0],
                   constraints=cons, method="SLSQP",
                   options={"ftol": 1e-12, "maxiter": 1000})
    x = problem.feasible_set.project(res.x)
    return x, problem.full_objective(x), problem.full_constraint(x)


# --------------------------------------------------------------------------
# sparse "label idx:val" text files

def load_sparse_classification(path, label_map=None, n_features=None, tau=1.0,
                               batch_fraction=None):
    """Read a sparse labeled file (``label idx:val ...``, 1-based indices).

    Labels must be +1 / -1 unless ``label_map`` sends each raw label to +1 or
    -1 (needed for multi-class files).  +1 rows form the positive class.
    """
    labels, rows = [], []
    dim = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            tokens = text.split()
            raw = tokens[0]
            if label_map is not None:
                if raw not in label_map:
                    raise ParseError(f"label {raw!r} missing from label map", lineno)
                lab = label_map[raw]
            else:
                try:
                    lab = int(float(raw))
                except ValueError:
                    raise ParseError(f"bad label {raw!r}", lineno) from None
            if lab not in (1, -1):
                raise ParseError(f"label must map to +1 or -1, got {raw!r}", lineno)
            entries = {}
            last = 0
            for tok in tokens[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    j, v = int(idx), float(val)
                except ValueError:
                    raise ParseError(f"malformed feature {tok!r}", lineno) from None
                if not sep or j < 1 or j <= last:
                    raise ParseError(f"indices must be 1-based and ascending at {tok!r}", lineno)
                last = j
                entries[j - 1] = v
            dim = max(dim, last)
            labels.append(lab)
            rows.append(entries)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    n = dim if n_features is None else n_features
    X = np.zeros((len(rows), n))
    for r, entries in enumerate(rows):
        for j, v in entries.items():
            X[r, j] = v
    labels = np.array(labels)
    if not (labels == 1).any() or not (labels == -1).any():
        raise ParseError(f"{path}: both classes must be present")
    data = NpClassificationData(X[labels == 1], X[labels == -1], tau)
    if batch_fraction is not None:
        data = data.with_default_batches(batch_fraction)
    return data


def write_sparse_classification(path, data):
    with open(path, "w") as fh:
        for lab, X in (("+1", data.positive), ("-1", data.negative)):
            for row in X:
                feats = " ".join(f"{j + 1}:{float(row[j])!r}" for j in np.flatnonzero(row))
                fh.write(f"{lab} {feats}".rstrip() + "\n")
