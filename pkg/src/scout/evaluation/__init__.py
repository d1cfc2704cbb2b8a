from ..metrics import MetricReport, brier, ece10, metric_report, pr_auc, roc_auc
from .analysis import DominanceMap, ResponseCurve, cost_sweep, perturbation_check
from .latency import LatencyReport, latency_bench
from .protocol import (
    OA_CAL,
    CalibrationSettings,
    CorrectionSettings,
    ProtocolError,
    ProtocolResult,
    ScorerSettings,
    SplitSpec,
    aggregate_reports,
    make_partitions,
    run_protocol,
)
from .reports import format_table, write_json, write_table

__all__ = [
    "OA_CAL",
    "CalibrationSettings",
    "CorrectionSettings",
    "DominanceMap",
    "LatencyReport",
    "MetricReport",
    "ProtocolError",
    "ProtocolResult",
    "ResponseCurve",
    "ScorerSettings",
    "SplitSpec",
    "aggregate_reports",
    "brier",
    "cost_sweep",
    "ece10",
    "format_table",
    "latency_bench",
    "make_partitions",
    "metric_report",
    "perturbation_check",
    "pr_auc",
    "roc_auc",
    "run_protocol",
    "write_json",
    "write_table",
]
