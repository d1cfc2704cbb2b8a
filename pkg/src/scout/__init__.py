"""Flaky-failure triage: decide whether a CI failure should be rerun or escalated."""
from .bundle import TriageModel, load_model, save_model
from .calibration import (
    Calibrator,
    CalibratorKind,
    OACalConfig,
    OACalReport,
    OverlapDiagnostics,
    OverlapGates,
    apply,
    fit_calibrator,
    oa_cal,
    oa_cal_scores,
    overlap_diagnostics,
)
from .core import (
    CostModel,
    Decision,
    LabeledExample,
    RerunTrace,
    bayes_threshold,
    budget_label,
    decide,
    decision_cost,
)
from .correction import (
    BetaPrior,
    build_corrected_training_set,
    fit_eb_prior,
    posterior_soft_target,
)
from .features import (
    FeatureVector,
    HistoryIndex,
    LeakageError,
    aggregate_family,
    extract_dataset,
    extract_features,
    missingness_gate,
)
from .metrics import MetricReport, brier, ece10, pr_auc, roc_auc
from .scoring import Scorer, ScorerConfig, ScorerVariant, score, score_many, train_scorer, vectorize_tokens

__version__ = "0.1.0"

__all__ = [
    "BetaPrior",
    "Calibrator",
    "CalibratorKind",
    "CostModel",
    "Decision",
    "FeatureVector",
    "HistoryIndex",
    "LabeledExample",
    "LeakageError",
    "MetricReport",
    "OACalConfig",
    "OACalReport",
    "OverlapDiagnostics",
    "OverlapGates",
    "RerunTrace",
    "Scorer",
    "ScorerConfig",
    "ScorerVariant",
    "TriageModel",
    "aggregate_family",
    "apply",
    "bayes_threshold",
    "brier",
    "budget_label",
    "build_corrected_training_set",
    "decide",
    "decision_cost",
    "ece10",
    "extract_dataset",
    "extract_features",
    "fit_calibrator",
    "fit_eb_prior",
    "load_model",
    "missingness_gate",
    "oa_cal",
    "oa_cal_scores",
    "overlap_diagnostics",
    "posterior_soft_target",
    "pr_auc",
    "roc_auc",
    "save_model",
    "score",
    "score_many",
    "train_scorer",
    "vectorize_tokens",
]
