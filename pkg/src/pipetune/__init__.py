"""Budget-aware two-phase configuration selection for multi-stage pipelines."""

__version__ = "0.1.0"

from .corpus import (
    DatasetGroup,
    EarlyStopTrajectory,
    RunRecord,
    Standardizer,
    fit_standardizer,
    load_corpus,
    save_corpus,
)
from .es_predictor import EarlyStopPredictor, PseudoObservation, reconstruct
from .gbt import Ensemble, GBTPairwiseRanker, GBTRegressor
from .gp import Matern52Kernel, ResidualGP
from .lodo import LodoHarness, LodoSettings, LodoSplit
from .metrics import (
    MetricReport,
    ndcg_at_k,
    pairwise_accuracy,
    recall_at_k,
    regret,
    spearman,
)
from .optimizer import (
    Schedules,
    SelectionResult,
    TwoPhaseOptimizer,
    tempered_score,
    update_offset,
    warm_start,
)
from .ranker import OfflineRanker, ScoredCandidates, select_top
from .simulator import SimDataset, SimSpec, Simulation, generate
from .space import (
    ConfigSpace,
    Configuration,
    default_space,
    encode,
    enumerate_configs,
    sample_balanced,
)

__all__ = [
    "ConfigSpace",
    "Configuration",
    "DatasetGroup",
    "EarlyStopPredictor",
    "EarlyStopTrajectory",
    "Ensemble",
    "GBTPairwiseRanker",
    "GBTRegressor",
    "LodoHarness",
    "LodoSettings",
    "LodoSplit",
    "Matern52Kernel",
    "MetricReport",
    "OfflineRanker",
    "PseudoObservation",
    "ResidualGP",
    "RunRecord",
    "Schedules",
    "ScoredCandidates",
    "SelectionResult",
    "SimDataset",
    "SimSpec",
    "Simulation",
    "Standardizer",
    "TwoPhaseOptimizer",
    "default_space",
    "encode",
    "enumerate_configs",
    "fit_standardizer",
    "generate",
    "load_corpus",
    "ndcg_at_k",
    "pairwise_accuracy",
    "recall_at_k",
    "reconstruct",
    "regret",
    "sample_balanced",
    "save_corpus",
    "select_top",
    "spearman",
    "tempered_score",
    "update_offset",
    "warm_start",
]
