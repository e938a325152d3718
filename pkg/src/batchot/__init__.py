"""Metric learning with batch-wise optimal transport weighting of pair losses."""

from batchot.embed import EmbedNet, OptimizerConfig
from batchot.errors import BatchOTError, InputError, SolverError, TraceMismatchError, UnsupportedOracleError
from batchot.ground import GroundMatrices, GroundParams, ground_matrices
from batchot.loss import LossValue, Weighting, WeightingMode, make_weights, otl_forward, otl_gradient
from batchot.metrics import RetrievalReport, retrieval_metrics
from batchot.ot import Marginals, SinkhornConfig, TransportPlan, exact_ot, sinkhorn, transport_cost

__version__ = "0.1.0"

__all__ = [
    "BatchOTError",
    "EmbedNet",
    "GroundMatrices",
    "GroundParams",
    "InputError",
    "LossValue",
    "Marginals",
    "OptimizerConfig",
    "RetrievalReport",
    "SinkhornConfig",
    "SolverError",
    "TraceMismatchError",
    "TransportPlan",
    "UnsupportedOracleError",
    "Weighting",
    "WeightingMode",
    "exact_ot",
    "ground_matrices",
    "make_weights",
    "otl_forward",
    "otl_gradient",
    "retrieval_metrics",
    "sinkhorn",
    "transport_cost",
]
