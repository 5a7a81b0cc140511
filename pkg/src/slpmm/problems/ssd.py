"""Portfolio selection under second-order stochastic dominance.

With a benchmark return Y supported on finitely many levels y_1..y_p the
dominance constraint reduces to

    g_i(x) = E[(y_i - xi^T x)_+] - E[(y_i - Y)_+] <= 0,   i = 1..p

and the objective is the negative expected return, over the capped simplex
{sum(x) = 1, 0 <= x <= x_bar}.  Both expectations are taken over a finite
scenario table; a scenario is a batch of row indices.
"""

import csv
from dataclasses import dataclass

import numpy as np

from slpmm.core import DATA_STREAM, CappedSimplex, StochasticProblem, seeded_stream
from slpmm.problems.parsing import ParseError


def reference_shortfalls(levels, benchmark):
    """``r_i = mean_j (y_i - Y_j)_+`` for every level ``y_i``."""
    levels = np.asarray(levels, dtype=float)
    benchmark = np.asarray(benchmark, dtype=float)
    return np.maximum(levels[:, None] - benchmark[None, :], 0.0).mean(axis=1)


def benchmark_levels(benchmark, count=None):
    """Distinct benchmark values, or ``count`` of its empirical quantiles."""
    benchmark = np.asarray(benchmark, dtype=float)
    if count is None:
        return np.unique(benchmark)
    qs = (np.arange(count) + 0.5) / count
    return np.unique(np.quantile(benchmark, qs, method="inverted_cdf"))


@dataclass(frozen=True)
class SsdPortfolioData:
    returns: np.ndarray      # (M, n) scenario asset returns
    benchmark: np.ndarray    # (M,) benchmark return per scenario
    levels: np.ndarray       # (p,) benchmark support points
    upper: np.ndarray        # (n,) position caps
    subset_size: int = None
    batch: int = 1

    def __post_init__(self):
        R = np.asarray(self.returns, dtype=float)
        Y = np.asarray(self.benchmark, dtype=float).ravel()
        y = np.asarray(self.levels, dtype=float).ravel()
        u = np.broadcast_to(np.asarray(self.upper, dtype=float), (R.shape[1],)).copy()
        if R.ndim != 2 or Y.shape[0] != R.shape[0]:
            raise ValueError("returns must be (M, n) with one benchmark value per row")
        if y.size < 1:
            raise ValueError("need at least one benchmark level")
        if np.any(u < 0) or u.sum() < 1.0:
            raise ValueError("caps must be nonnegative with sum >= 1")
        if not 1 <= self.batch <= R.shape[0]:
            raise ValueError("batch must lie between 1 and the scenario count")
        if self.subset_size is not None and not 1 <= self.subset_size <= y.size:
            raise ValueError("subset size must lie between 1 and the number of levels")
        for name, val in (("returns", R), ("benchmark", Y), ("levels", y), ("upper", u)):
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.returns.shape[1]

    @property
    def M(self):
        return self.returns.shape[0]

    @property
    def p(self):
        return self.levels.size

    @property
    def shortfalls(self):
        return reference_shortfalls(self.levels, self.benchmark)


def make_ssd_data(returns, benchmark, levels=None, level_count=None, upper=1.0,
                  subset_size=None, batch=1):
    """Data with default levels (distinct benchmark values, or quantiles)."""
    if levels is None:
        levels = benchmark_levels(benchmark, level_count)
    return SsdPortfolioData(returns, benchmark, levels, upper, subset_size, batch)


def make_ssd_synthetic(n=10, M=500, seed=0, level_count=50, subset_size=10,
                       benchmark_weights=None, upper=1.0):
    """Scenario returns from a one-factor model; the benchmark is a fixed
    portfolio (equal weights by default) of the same assets, so it is
    feasible and dominates itself."""
    rng = seeded_stream(seed, DATA_STREAM)
    mu = rng.uniform(0.0, 0.01, size=n)
    beta = rng.uniform(0.5, 1.5, size=n)
    vol = rng.uniform(0.01, 0.04, size=n)
    market = 0.02 * rng.standard_normal(M)
    returns = mu + market[:, None] * beta + rng.standard_normal((M, n)) * vol
    w = np.full(n, 1.0 / n) if benchmark_weights is None else np.asarray(benchmark_weights)
    return make_ssd_data(returns, returns @ w, level_count=level_count, upper=upper,
                         subset_size=subset_size)


class SsdProblem(StochasticProblem):
    name = "ssd"

    def __init__(self, data):
        self.data = data
        self.n, self.p = data.n, data.p
        self.feasible_set = CappedSimplex(data.upper)
        self._r = data.shortfalls

    def sample(self, rng):
        return rng.integers(0, self.data.M, size=self.data.batch)

    def sample_batch(self, rng, size):
        return list(rng.integers(0, self.data.M, size=(size, self.data.batch)))

    def evaluate(self, x, scenario):
        xi = self.data.returns[scenario]
        port = xi @ x
        gap = self.data.levels[:, None] - port[None, :]        # (p, b)
        F = -float(port.mean())
        G = np.maximum(gap, 0.0).mean(axis=1) - self._r
        v0 = -xi.mean(axis=0)
        # zero subgradient at the kink
        V = -((gap > 0).astype(float) @ xi) / len(scenario)
        return F, G, v0, V

    def values_batch(self, x, scenarios):
        idx = np.asarray(scenarios).reshape(len(scenarios), -1)
        port = (self.data.returns @ x)[idx]                       # (B, b)
        F = -port.mean(axis=1)
        G = np.maximum(self.data.levels[None, :, None] - port[:, None, :], 0.0).mean(axis=2) - self._r
        return F, G

    def values(self, x, scenario):
        F, G = self.values_batch(x, [scenario])
        return float(F[0]), G[0]

    def full_pass(self):
        return list(np.arange(self.data.M)[:, None])

    def exact_objective(self, x):
        return -float(self.data.returns.mean(axis=0) @ x)

    def exact_constraints(self, x):
        port = self.data.returns @ np.asarray(x, dtype=float)
        return np.maximum(self.data.levels[:, None] - port[None, :], 0.0).mean(axis=1) - self._r

    def benchmark_objective(self):
        return -float(self.data.benchmark.mean())

    def metadata(self):
        meta = super().metadata()
        meta.update(M=self.data.M, levels=self.data.levels.tolist(),
                    benchmark_mean=float(self.data.benchmark.mean()))
        return meta


def ssd_oracle(data):
    return SsdProblem(data)


def load_scenarios_csv(path, levels=None, level_count=None, upper=1.0, subset_size=None):
    """Read an ``M x (n+1)`` numeric CSV whose last column is the benchmark.

    A single non-numeric first row is treated as a header.
    """
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                if lineno == 1 and not rows:
                    continue
                col = next(i for i, c in enumerate(rec, 1) if not _is_number(c))
                raise ParseError(f"non-numeric cell {rec[col - 1]!r}", lineno, col) from None
            if rows and len(vals) != len(rows[0]):
                raise ParseError(f"expected {len(rows[0])} columns, got {len(vals)}", lineno)
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    if len(rows[0]) < 2:
        raise ParseError("need at least one asset column and the benchmark column", 1)
    table = np.array(rows)
    return make_ssd_data(table[:, :-1], table[:, -1], levels=levels, level_count=level_count,
                         upper=upper, subset_size=subset_size)


def write_scenarios_csv(path, data, header=True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"asset{j + 1}" for j in range(data.n)] + ["benchmark"])
        for row, yb in zip(data.returns, data.benchmark):
            w.writerow([repr(float(v)) for v in row] + [repr(float(yb))])


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True
