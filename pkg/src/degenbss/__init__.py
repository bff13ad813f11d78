"""Blind separation of nonnegative, nearly degenerate mixtures."""

from .clustering import ClusterOptions, ClusterResult, estimate_mixing_by_clustering
from .cone import nnls, recover_pseudo_inverse, score_columns, select_extreme_columns
from .core import (
    EquivalenceTransform,
    MixingEstimate,
    ModelDims,
    NonnegMatrix,
    SolverReport,
    apply_equivalence,
    condition_number,
    mix,
    vector_angle,
)
from .errors import (
    ClusteringError,
    ConvergenceError,
    DataError,
    DegenBSSError,
    GenerationError,
    InfeasibleError,
    SelectionError,
    SolverError,
    UsageError,
)
from .l1 import L1Options, recover_sources_l1, solve_column_lp, solve_column_penalized
from .metrics import EvalReport, evaluate, match_sources, negative_energy_ratio
from .qp import QpOptions, QpResult, implied_mixing, kkt_residuals, refine_inverse

__version__ = "0.1.0"
