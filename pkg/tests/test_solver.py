import numpy as np
import pytest

from slpmm.core import Ball, IterateState, SolverConfig, StochasticProblem, seeded_stream
from slpmm.problems import make_qcqp, make_ssd_synthetic, qcqp_oracle, ssd_oracle
from slpmm.solver import (SolverError, linearized_augmented_lagrangian, run_fingerprint,
                          sample_constraint_subset, slpmm_run, slpmm_step, update_multipliers)


@pytest.fixture(scope="module")
def qcqp():
    return qcqp_oracle(make_qcqp(n=10, p=3, seed=4))


class TestUpdateMultipliers:
    def test_negative_updates_clip(self):
        out = update_multipliers(np.zeros(2), 0.1, np.array([-1.0, -2.0]), np.zeros((2, 3)),
                                 np.ones(3))
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_scalar_arithmetic(self):
        out = update_multipliers(np.array([1.0, 0.0]), 1.0, np.array([0.5, -3.0]),
                                 np.zeros((2, 2)), np.zeros(2))
        np.testing.assert_array_equal(out, [1.5, 0.0])

    def test_matches_scalar_loop(self, rng):
        for _ in range(20):
            lam = np.abs(rng.standard_normal(4))
            G, V, dx = rng.standard_normal(4), rng.standard_normal((4, 3)), rng.standard_normal(3)
            sigma = rng.uniform(0.1, 2.0)
            expected = [max(0.0, lam[i] + sigma * (G[i] + sum(V[i, j] * dx[j] for j in range(3))))
                        for i in range(4)]
            np.testing.assert_allclose(update_multipliers(lam, sigma, G, V, dx), expected,
                                       rtol=1e-14, atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            update_multipliers(np.zeros(2), 1.0, np.zeros(2), np.zeros((3, 2)), np.zeros(2))


class TestConstraintSubset:
    def test_full_set_canonical(self):
        np.testing.assert_array_equal(sample_constraint_subset(5, 5, seeded_stream(0, 0)),
                                      np.arange(5))

    def test_deterministic(self):
        a = sample_constraint_subset(10, 3, seeded_stream(9, 2))
        b = sample_constraint_subset(10, 3, seeded_stream(9, 2))
        np.testing.assert_array_equal(a, b)
        assert len(set(a.tolist())) == 3

    def test_uniform_frequencies(self):
        rng = seeded_stream(0, 0)
        draws = 100_000
        counts = np.zeros(10)
        for _ in range(draws):
            counts[sample_constraint_subset(10, 3, rng)] += 1
        sd = np.sqrt(0.3 * 0.7 / draws)
        assert np.all(np.abs(counts / draws - 0.3) <= 3 * sd)

    @pytest.mark.parametrize("p, m", [(3, 4), (3, 0)])
    def test_rejects_bad_sizes(self, p, m):
        with pytest.raises(ValueError):
            sample_constraint_subset(p, m, seeded_stream(0, 0))


class TestStep:
    def test_huge_alpha_barely_moves(self, qcqp):
        cfg = SolverConfig(iterations=1, alpha=1e8, sigma=0.5, policy="explicit",
                           subproblem_solver="apg")
        x = qcqp.initial_point()
        lam = np.array([0.3, 0.0, 1.0])
        state = IterateState(0, x, lam)
        new, rec = slpmm_step(state, qcqp, cfg, seeded_stream(1, 0))
        _, _, v0, _ = qcqp.evaluate(x, qcqp.sample(seeded_stream(1, 0)))
        assert rec.step_norm <= 1e-6 * (1 + np.linalg.norm(v0))
        np.testing.assert_allclose(new.lam, np.maximum(lam + 0.5 * rec.G, 0.0), atol=1e-6)

    def test_closed_form_and_apg_agree(self):
        prob = qcqp_oracle(make_qcqp(n=10, p=1, seed=2))
        for k in range(20):
            state = IterateState(k, prob.feasible_set.random_point(seeded_stream(k, 5)) * 0.5,
                                 np.array([0.2 * k]))
            out = []
            for solver in ("closed-form-p1", "apg"):
                cfg = SolverConfig(iterations=100, subproblem_solver=solver)
                out.append(slpmm_step(state, prob, cfg, seeded_stream(3, k)))
            assert out[0][1].sub_path == "closed-form"
            assert out[1][1].sub_path == "apg"
            np.testing.assert_allclose(out[0][0].x, out[1][0].x, atol=1e-5)

    def test_minimizes_augmented_lagrangian(self, qcqp):
        cfg = SolverConfig(iterations=25, subproblem_solver="apg", apg_tol=1e-10)
        x = qcqp.initial_point()
        lam = np.array([0.5, 0.1, 0.0])
        new, rec = slpmm_step(IterateState(0, x, lam), qcqp, cfg, seeded_stream(0, 0))
        F, G, v0, V = qcqp.evaluate(x, qcqp.sample(seeded_stream(0, 0)))
        alpha, sigma = cfg.effective_alpha, cfg.effective_sigma

        def obj(z):
            return (linearized_augmented_lagrangian(z, lam, F, G, v0, V, x, sigma)
                    + 0.5 * alpha * (z - x) @ (z - x))

        best = obj(new.x)
        rng = seeded_stream(0, 1)
        for _ in range(200):
            z = qcqp.feasible_set.project(new.x + 0.05 * rng.standard_normal(10))
            assert obj(z) >= best - 1e-9

    def test_subset_freezes_other_multipliers(self):
        prob = ssd_oracle(make_ssd_synthetic(n=5, M=100, level_count=8, seed=1, subset_size=None))
        cfg = SolverConfig(iterations=50, subset_size=2)
        lam = np.linspace(0.1, 0.8, prob.p)
        state = IterateState(0, prob.initial_point(), lam)
        new, rec = slpmm_step(state, prob, cfg, seeded_stream(0, 0))
        outside = np.setdiff1d(np.arange(prob.p), rec.subset)
        assert len(rec.subset) == 2
        np.testing.assert_array_equal(new.lam[outside], lam[outside])


class TestRun:
    def test_zero_iterations(self, qcqp):
        trace = slpmm_run(qcqp, SolverConfig(iterations=0))
        assert len(trace) == 0
        assert trace.averaged is None
        np.testing.assert_array_equal(trace.x_last, qcqp.initial_point())

    def test_rerun_identical(self, qcqp):
        cfg = SolverConfig(iterations=200, seed=11)
        assert run_fingerprint(slpmm_run(qcqp, cfg)) == run_fingerprint(slpmm_run(qcqp, cfg))

    def test_seeds_differ(self, qcqp):
        a = slpmm_run(qcqp, SolverConfig(iterations=20, seed=1))
        b = slpmm_run(qcqp, SolverConfig(iterations=20, seed=2))
        assert run_fingerprint(a) != run_fingerprint(b)

    def test_prefix_consistent(self, qcqp):
        cfg = dict(policy="explicit", alpha=10.0, sigma=0.1, seed=3)
        short = slpmm_run(qcqp, SolverConfig(iterations=30, **cfg))
        long = slpmm_run(qcqp, SolverConfig(iterations=60, **cfg))
        np.testing.assert_array_equal(np.array(short.iterates), np.array(long.iterates[:31]))

    def test_invariants(self, qcqp):
        trace = slpmm_run(qcqp, SolverConfig(iterations=300, seed=5))
        assert len(trace) == 300
        assert len(trace.iterates) == 301
        for x, lam in zip(trace.iterates, trace.multipliers):
            assert qcqp.feasible_set.contains(x)
            assert np.all(lam >= 0)
        assert qcqp.feasible_set.contains(trace.averaged)
        np.testing.assert_array_equal(trace.multipliers[0], 0.0)
        assert abs(trace.alpha * trace.sigma - 1.0) <= 1e-15

    def test_online_bounds_hold(self, qcqp):
        trace = slpmm_run(qcqp, SolverConfig(iterations=400, seed=0))
        checks = trace.check_bounds()
        assert checks["step_length"].checked > 0
        assert checks["step_length"].violations == 0
        assert checks["lambda_drift"].violations == 0

    def test_estimates_nondecreasing(self, qcqp):
        trace = slpmm_run(qcqp, SolverConfig(iterations=100, seed=0))
        for name in ("kappa_f", "kappa_g", "nu_g"):
            vals = [getattr(s.estimates, name) for s in trace.steps]
            assert np.all(np.diff(vals) >= 0)

    def test_infeasible_start_rejected(self, qcqp):
        with pytest.raises(ValueError):
            slpmm_run(qcqp, SolverConfig(iterations=5), x0=np.full(10, 5.0))

    def test_failure_carries_partial_trace(self):
        class Breaks(StochasticProblem):
            name = "breaks"

            def __init__(self):
                self.n, self.p = 2, 1
                self.feasible_set = Ball(np.zeros(2), 1.0)

            def sample(self, rng):
                return rng.random()

            def evaluate(self, x, s):
                bad = np.nan if x[0] > 0.05 else 0.0
                return bad, np.array([-1.0]), np.array([-1.0, 0.0]), np.zeros((1, 2))

        cfg = SolverConfig(iterations=100, policy="explicit", alpha=10.0, sigma=1.0)
        with pytest.raises(SolverError) as info:
            slpmm_run(Breaks(), cfg)
        assert info.value.k > 0
        assert len(info.value.trace) == info.value.k

    @pytest.mark.slow
    def test_constraint_estimate_decreases_with_k(self):
        prob = qcqp_oracle(make_qcqp(n=20, p=3, seed=1))
        medians = []
        for K in (100, 400, 1600):
            vals = [np.max(prob.exact_constraints(slpmm_run(prob, SolverConfig(K, seed=s)).averaged))
                    for s in range(10)]
            medians.append(np.median(vals))
        assert medians[0] > medians[1] > medians[2]
