"""Stochastic QCQP over a ball with a planted Slater point.

Each scenario draws, for i = 0..p, a symmetric perturbation Delta_i with
entries uniform on [-0.1, 0.1], a vector b_i uniform on [-1, 1]^n and a
scalar h_i uniform on [0, 2i].  With A_i = I + Delta_i,

    c_i = -(1/2 xh^T A_i xh + b_i^T xh + h_i)
    F(x) = 1/2 x^T A_0 x + b_0^T x - c_0
    G_i(x) = 1/2 x^T A_i x + b_i^T x + c_i

so that E[G_i(xh)] = -i, the minimizer over the ball is 0 and the optimal
value is ||xh||^2 / 2.

Sampling convention: a scenario is a flat vector of raw U[0,1) draws laid
out block by block for i = 0..p as (upper triangle of Delta_i in row-major
order including the diagonal, then b_i, then h_i).  Delta_i is mirrored from
its upper triangle.  Drawing a batch is therefore the same as drawing its
scenarios one after another.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from slpmm.core import DATA_STREAM, Ball, StochasticProblem, seeded_stream


@dataclass(frozen=True)
class QcqpInstance:
    n: int
    p: int
    radius: float
    x_hat: np.ndarray
    delta_scale: float = 0.1
    seed: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or not self.radius > 0:
            raise ValueError("need n >= 1, p >= 1, radius > 0")
        x_hat = np.asarray(self.x_hat, dtype=float)
        if x_hat.shape != (self.n,):
            raise ValueError("x_hat must have length n")
        object.__setattr__(self, "x_hat", x_hat)

    @property
    def optimal_value(self):
        return 0.5 * float(self.x_hat @ self.x_hat)


def make_qcqp(n=20, p=3, radius=2.0, seed=0, x_hat=None):
    """Instance with ``x_hat`` uniform on ``(-R/sqrt(n), R/sqrt(n))^n``
    drawn from the data stream of ``seed`` (unless given)."""
    if x_hat is None:
        rng = seeded_stream(seed, DATA_STREAM)
        h = radius / math.sqrt(n)
        x_hat = rng.uniform(-h, h, size=n)
    return QcqpInstance(n, p, radius, x_hat, seed=seed)


class QcqpProblem(StochasticProblem):
    name = "qcqp"

    def __init__(self, inst):
        self.inst = inst
        self.n, self.p = inst.n, inst.p
        self.feasible_set = Ball(np.zeros(inst.n), inst.radius)
        self._iu = np.triu_indices(inst.n)
        self._tri = len(self._iu[0])
        self._block = self._tri + inst.n + 1
        self._h_hi = 2.0 * np.arange(inst.p + 1)
        self._w_hat = self._quad_weights(inst.x_hat)
        self._q_hat = float(inst.x_hat @ inst.x_hat)

    @property
    def scenario_size(self):
        return (self.p + 1) * self._block

    def sample(self, rng):
        return rng.random(self.scenario_size)

    def sample_batch(self, rng, size):
        return rng.random((size, self.scenario_size))

    def _decode(self, u):
        # u: (..., scenario_size) -> delta (..., p+1, tri), b (..., p+1, n), h (..., p+1)
        u = u.reshape(u.shape[:-1] + (self.p + 1, self._block))
        s = self.inst.delta_scale
        delta = s * (2.0 * u[..., :self._tri] - 1.0)
        b = 2.0 * u[..., self._tri:self._tri + self.n] - 1.0
        h = self._h_hi * u[..., -1]
        return delta, b, h

    def _quad_weights(self, x):
        # x^T Delta x = delta . w(x) for the upper-triangle parametrization
        i, j = self._iu
        w = x[i] * x[j]
        w[i != j] *= 2.0
        return w

    def _matrix(self, delta_row):
        M = np.zeros((self.n, self.n))
        M[self._iu] = delta_row
        return M + np.triu(M, 1).T

    def values_batch(self, x, scenarios):
        x = np.asarray(x, dtype=float)
        delta, b, h = self._decode(np.asarray(scenarios))
        w = self._quad_weights(x)
        # per i: 1/2 x^T A_i x + b_i^T x  minus the same at x_hat, minus h_i
        quad = 0.5 * (x @ x - self._q_hat) + 0.5 * (delta @ (w - self._w_hat))
        lin = b @ (x - self.inst.x_hat)
        G_all = quad + lin - h
        # objective keeps -c_0, i.e. the x_hat terms enter with a plus sign
        F = (0.5 * (x @ x + self._q_hat) + 0.5 * (delta[..., 0, :] @ (w + self._w_hat))
             + b[..., 0, :] @ (x + self.inst.x_hat) + h[..., 0])
        return F, G_all[..., 1:]

    def values(self, x, scenario):
        F, G = self.values_batch(x, np.asarray(scenario)[None, :])
        return float(F[0]), G[0]

    def evaluate(self, x, scenario):
        x = np.asarray(x, dtype=float)
        F, G = self.values(x, scenario)
        delta, b, _ = self._decode(np.asarray(scenario))
        grads = np.empty((self.p + 1, self.n))
        for i in range(self.p + 1):
            grads[i] = x + self._matrix(delta[i]) @ x + b[i]
        return F, G, grads[0], grads[1:]

    def matrices(self, scenario):
        """Explicit ``(A, b, c)`` lists for one scenario, i = 0..p."""
        delta, b, h = self._decode(np.asarray(scenario))
        xh = self.inst.x_hat
        A = [np.eye(self.n) + self._matrix(delta[i]) for i in range(self.p + 1)]
        c = [-(0.5 * xh @ A[i] @ xh + b[i] @ xh + h[i]) for i in range(self.p + 1)]
        return A, list(b), c

    def exact_objective(self, x):
        """f(x) in closed form (the perturbations and b have mean zero)."""
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ x) + 0.5 * self._q_hat

    def exact_constraints(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ x) - 0.5 * self._q_hat - np.arange(1, self.p + 1, dtype=float)

    def initial_point(self):
        # start used for this family: every entry sqrt(R/n)
        return np.full(self.n, math.sqrt(self.inst.radius / self.n))

    def reference_value(self):
        return self.inst.optimal_value

    def metadata(self):
        meta = super().metadata()
        meta.update(x_hat=self.inst.x_hat.tolist(), radius=self.inst.radius,
                    optimal_value=self.inst.optimal_value, seed=self.inst.seed)
        return meta


def qcqp_oracle(inst):
    return QcqpProblem(inst)
