"""Benchmark problem families."""

from slpmm.problems.neyman_pearson import (NpClassificationData, NpProblem,
                                           load_sparse_classification, make_np_synthetic,
                                           np_oracle, np_reference_optimum,
                                           write_sparse_classification)
from slpmm.problems.parsing import ParseError
from slpmm.problems.qcqp import QcqpInstance, QcqpProblem, make_qcqp, qcqp_oracle
from slpmm.problems.ssd import (SsdPortfolioData, SsdProblem, load_scenarios_csv,
                                make_ssd_data, make_ssd_synthetic, ssd_oracle,
                                write_scenarios_csv)

__all__ = [
    "NpClassificationData", "NpProblem", "load_sparse_classification", "make_np_synthetic",
    "np_oracle", "np_reference_optimum", "write_sparse_classification", "ParseError",
    "QcqpInstance", "QcqpProblem", "make_qcqp", "qcqp_oracle", "SsdPortfolioData",
    "SsdProblem", "load_scenarios_csv", "make_ssd_data", "make_ssd_synthetic", "ssd_oracle",
    "write_scenarios_csv",
]
