from .generate import (
    InfeasibleTargetError,
    apply_selective_labeling,
    benchmark_summary,
    generate_benchmark,
    simulate_reruns,
)
from .io import DatasetFormatError, export_dataset, import_dataset
from .model import (
    TELEMETRY_FAMILIES,
    FaultFamily,
    FaultSpec,
    RunRecord,
    ScenarioKind,
    SimConfig,
    StressScenario,
)

__all__ = [
    "TELEMETRY_FAMILIES",
    "DatasetFormatError",
    "FaultFamily",
    "FaultSpec",
    "InfeasibleTargetError",
    "RunRecord",
    "ScenarioKind",
    "SimConfig",
    "StressScenario",
    "apply_selective_labeling",
    "benchmark_summary",
    "export_dataset",
    "generate_benchmark",
    "import_dataset",
    "simulate_reruns",
]
