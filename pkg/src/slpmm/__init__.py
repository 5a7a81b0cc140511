"""Stochastic linearized proximal method of multipliers for
expectation-constrained convex programs."""

from slpmm.core import (Ball, Box, CappedSimplex, DiagnosticEstimates, Estimate,
                        EvaluationError, FeasibleSet, IterateState, RunTrace, Simplex,
                        SolverConfig, StochasticProblem, averaged_iterate, check_convexity,
                        estimate_expectations, seeded_stream)
from slpmm.projections import (project_ball, project_box, project_capped_simplex,
                               project_simplex)
from slpmm.solver import (SolverError, sample_constraint_subset, slpmm_run, slpmm_step,
                          update_multipliers)
from slpmm.subproblem import (ConvergenceError, SubproblemData, apg_solve,
                              build_subproblem, closed_form_p1, phi_grad, phi_value)

__version__ = "0.1.0"
