"""Record types and generator parameter tables for the synthetic CI benchmark."""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

from ..core import RerunTrace

TELEMETRY_FAMILIES: tuple[str, ...] = (
    "cpu_usage",
    "io_wait",
    "disk_latency",
    "network_rtt",
    "lock_wait_ratio",
    "txn_retry_rate",
    "deadlock_count",
    "lsm_compaction",
    "lsm_flush",
    "lsm_write_stall",
    "raft_apply_latency",
    "raft_proposal_latency",
    "leader_changes",
    "queue_wait",
)

POST_FAILURE_OFFSET = 30.0


class FaultFamily(str, enum.Enum):
    NETWORK_DELAY = "network_delay"
    PACKET_LOSS = "packet_loss"
    CPU_PRESSURE = "cpu_pressure"
    DISK_IO_NOISE = "disk_io_noise"
    LEADER_CHANGE = "leader_change"
    NO_FAULT = "no_fault"


@dataclass(frozen=True)
class FaultSpec:
    family: FaultFamily
    severity: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", FaultFamily(self.family))
        if self.family is FaultFamily.NO_FAULT and self.severity != 0:
            raise ValueError("NoFault must have severity 0")
        if self.family is not FaultFamily.NO_FAULT and self.severity < 1:
            raise ValueError(f"{self.family.value} needs severity >= 1")


DEFAULT_FAULT_MIX = {
    FaultFamily.NO_FAULT.value: 0.35,
    FaultFamily.NETWORK_DELAY.value: 0.13,
    FaultFamily.PACKET_LOSS.value: 0.13,
    FaultFamily.CPU_PRESSURE.value: 0.13,
    FaultFamily.DISK_IO_NOISE.value: 0.13,
    FaultFamily.LEADER_CHANGE.value: 0.13,
}


@dataclass(frozen=True)
class SimConfig:
    """Knobs of the benchmark generator.

    ``target_failure_rate`` and ``target_flaky_share`` are hit by rescaling the
    failure and rerun-pass intercepts; defaults reproduce a 12,000-run
    benchmark with roughly 3,680 failures of which about 12.5% are flaky
    under an 8-rerun budget.
    """

    n_primary_runs: int = 12000
    rerun_budget: int = 8
    window_seconds: float = 120.0
    timesteps_per_window: int = 5
    n_test_identities: int = 200
    n_commits: int = 400
    workload_types: tuple[str, ...] = ("tpcc", "ycsb", "sysbench", "tpch")
    versions: tuple[str, ...] = ("v7.1", "v7.5", "v8.1")
    fault_mix: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_FAULT_MIX))
    severity_levels: int = 3
    target_failure_rate: float = 0.3067
    target_flaky_share: float = 0.1255
    persistent_defect_rate: float = 0.12
    missing_rate: float = 0.0
    drift: float = 0.25
    include_post_failure: bool = False
    seed: int = 1

    def __post_init__(self):
        object.__setattr__(self, "workload_types", tuple(self.workload_types))
        object.__setattr__(self, "versions", tuple(self.versions))
        mix = {FaultFamily(k).value: float(v) for k, v in dict(self.fault_mix).items()}
        object.__setattr__(self, "fault_mix", mix)
        self.validate()

    def validate(self) -> None:
        for name in ("n_primary_runs", "rerun_budget", "timesteps_per_window",
                     "n_test_identities", "n_commits", "severity_levels"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.workload_types or not self.versions:
            raise ValueError("workload_types and versions must be nonempty")
        if any(v < 0 for v in self.fault_mix.values()):
            raise ValueError("fault_mix probabilities must be >= 0")
        if abs(sum(self.fault_mix.values()) - 1.0) > 1e-9:
            raise ValueError(f"fault_mix must sum to 1, got {sum(self.fault_mix.values())!r}")
        for name in ("target_failure_rate", "target_flaky_share"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not 0.0 <= self.persistent_defect_rate < 1.0:
            raise ValueError("persistent_defect_rate must lie in [0, 1)")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must lie in [0, 1)")
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def telemetry_offsets(self) -> tuple[float, ...]:
        T = self.timesteps_per_window
        if T == 1:
            return (0.0,)
        step = self.window_seconds / (T - 1)
        return tuple(-self.window_seconds + k * step for k in range(T))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["workload_types"] = list(self.workload_types)
        d["versions"] = list(self.versions)
        d["fault_mix"] = dict(self.fault_mix)
        return d


class ScenarioKind(str, enum.Enum):
    IID = "iid"
    STICKY_MARKOV = "sticky_markov"
    COOLDOWN = "cooldown"
    CONTENTION = "contention"
    INTERVENTION = "intervention"
    WARM_CACHE = "warm_cache"
    SELECTIVE_LABELING = "selective_labeling"


SELECTION_LEVELS = ("none", "mild", "strong")


@dataclass(frozen=True)
class StressScenario:
    """How reruns of the same failure relate to each other."""

    kind: ScenarioKind = ScenarioKind.IID
    rho: float = 0.0
    gamma: float = 0.0
    p: float = 0.0
    delta: float = 0.0
    level: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.kind in (ScenarioKind.COOLDOWN, ScenarioKind.CONTENTION) and not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if not -1.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (-1, 1)")
        if self.level not in SELECTION_LEVELS:
            raise ValueError(f"level must be one of {SELECTION_LEVELS}")

    @classmethod
    def iid(cls):
        return cls()

    @classmethod
    def sticky_markov(cls, rho: float):
        return cls(ScenarioKind.STICKY_MARKOV, rho=rho)

    @classmethod
    def cooldown(cls, gamma: float):
        return cls(ScenarioKind.COOLDOWN, gamma=gamma)

    @classmethod
    def contention(cls, gamma: float):
        return cls(ScenarioKind.CONTENTION, gamma=gamma)

    @classmethod
    def intervention(cls, p: float, delta: float):
        return cls(ScenarioKind.INTERVENTION, p=p, delta=delta)

    @classmethod
    def warm_cache(cls, p: float, delta: float):
        return cls(ScenarioKind.WARM_CACHE, p=p, delta=delta)

    @classmethod
    def selective_labeling(cls, level: str):
        return cls(ScenarioKind.SELECTIVE_LABELING, level=level)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


@dataclass(frozen=True)
class RunRecord:
    """One primary CI run.

    ``telemetry`` maps each family to ``(offset_seconds, value)`` samples,
    offsets relative to the failure time (non-positive inside the pre-failure
    window).  Passing runs carry no telemetry and no rerun trace.  The
    ``latent_q`` and ``persistent_defect`` fields are generator ground truth
    and must never reach a model.
    """

    run_id: str
    test_id: str
    commit_id: str
    workload: str
    version: str
    start_time: float
    duration: float
    failure_time: float | None
    telemetry: Mapping[str, tuple[tuple[float, float], ...]]
    metadata_tokens: tuple[str, ...]
    rerun_trace: RerunTrace | None
    fault: FaultSpec
    latent_q: float
    persistent_defect: bool = False

    @property
    def failed(self) -> bool:
        return self.failure_time is not None

    @property
    def labeled(self) -> bool:
        return self.rerun_trace is not None


# --- generator parameter tables -------------------------------------------
# telemetry baseline: family -> (mean, noise scale)
BASELINE = {
    "cpu_usage": (45.0, 8.0),
    "io_wait": (6.0, 2.0),
    "disk_latency": (4.0, 1.0),
    "network_rtt": (1.2, 0.3),
    "lock_wait_ratio": (0.05, 0.02),
    "txn_retry_rate": (2.0, 0.8),
    "deadlock_count": (0.3, 0.3),
    "lsm_compaction": (12.0, 4.0),
    "lsm_flush": (80.0, 20.0),
    "lsm_write_stall": (0.5, 0.4),
    "raft_apply_latency": (3.0, 0.8),
    "raft_proposal_latency": (2.5, 0.7),
    "leader_changes": (0.1, 0.2),
    "queue_wait": (5.0, 1.5),
}

# multiplicative baseline-mean changes per workload and per version lineage
WORKLOAD_TELEMETRY = {
    "tpcc": {"lock_wait_ratio": 1.5, "txn_retry_rate": 1.4},
    "ycsb": {"network_rtt": 1.1, "cpu_usage": 0.9},
    "sysbench": {"cpu_usage": 1.2, "io_wait": 1.2},
    "tpch": {"cpu_usage": 1.4, "io_wait": 1.6, "disk_latency": 1.3, "lsm_compaction": 1.3},
}
VERSION_TELEMETRY = {
    "v8": {"raft_apply_latency": 0.8, "raft_proposal_latency": 0.8, "lsm_write_stall": 0.7},
}

# (failure-logit offset, rerun-pass-logit offset) per workload / version lineage
WORKLOAD_LOGITS = {"tpcc": (0.2, -0.1), "ycsb": (0.0, 0.1), "sysbench": (-0.1, 0.0), "tpch": (0.1, -0.2)}
VERSION_LOGITS = {"v7": (0.0, 0.0), "v8": (-0.1, 0.2)}

# per-severity-unit telemetry shifts, in units of the family noise scale
FAULT_EFFECTS = {
    FaultFamily.NETWORK_DELAY: {"network_rtt": 1.2, "raft_proposal_latency": 0.5, "txn_retry_rate": 0.3},
    FaultFamily.PACKET_LOSS: {"network_rtt": 0.6, "txn_retry_rate": 0.8, "raft_apply_latency": 0.4},
    FaultFamily.CPU_PRESSURE: {"cpu_usage": 1.2, "queue_wait": 0.6, "raft_apply_latency": 0.3},
    FaultFamily.DISK_IO_NOISE: {"disk_latency": 1.2, "io_wait": 0.9, "lsm_flush": 0.5, "lsm_write_stall": 0.3},
    FaultFamily.LEADER_CHANGE: {"leader_changes": 1.5, "raft_proposal_latency": 0.6, "txn_retry_rate": 0.4},
    FaultFamily.NO_FAULT: {},
}

# (failure base, failure per severity, q base, q decrease per severity)
FAULT_LOGITS = {
    FaultFamily.NO_FAULT: (0.0, 0.0, 0.0, 0.0),
    FaultFamily.NETWORK_DELAY: (0.3, 0.5, 0.6, 0.3),
    FaultFamily.PACKET_LOSS: (0.4, 0.5, 0.5, 0.2),
    FaultFamily.CPU_PRESSURE: (0.2, 0.4, 0.4, 0.3),
    FaultFamily.DISK_IO_NOISE: (0.3, 0.5, 0.2, 0.4),
    FaultFamily.LEADER_CHANGE: (0.5, 0.6, 0.9, 0.3),
}

# shared transient-contention driver: telemetry loadings and logit slopes
CONTENTION_LOADINGS = {"lock_wait_ratio": 0.9, "queue_wait": 0.7, "lsm_compaction": 0.6, "txn_retry_rate": 0.4}
CONTENTION_FAIL_SLOPE = 0.6
CONTENTION_Q_SLOPE = 0.7
RUNNER_CONTENTION = {"pool-a": 0.0, "pool-b": 0.1, "pool-c": 0.4}

# telemetry signature of a persistent defect
DEFECT_SIGNATURE = {"deadlock_count": 0.9, "lsm_write_stall": 0.9, "raft_proposal_latency": 0.3}
DEFECT_FAILURE_PROB = 0.92
DEFECT_Q = 0.002

Q_LOGIT_NOISE = 0.7
SUITE_Q_SPREAD = 0.3
N_SUITES = 12
DRIFT_LOADINGS = {"cpu_usage": 1.0, "disk_latency": 0.5, "raft_apply_latency": 0.5}
TRIGGERS = ("push", "pr", "nightly")
RUNNER_POOLS = tuple(RUNNER_CONTENTION)

# relative masking propensity per fault family under selective labeling
SELECTION_MULTIPLIERS = {
    FaultFamily.NO_FAULT: 0.5,
    FaultFamily.NETWORK_DELAY: 1.6,
    FaultFamily.PACKET_LOSS: 1.4,
    FaultFamily.CPU_PRESSURE: 0.8,
    FaultFamily.DISK_IO_NOISE: 1.2,
    FaultFamily.LEADER_CHANGE: 1.0,
}
SELECTION_RATES = {"none": 0.0, "mild": 0.2, "strong": 0.5}


def version_lineage(version: str) -> str:
    """``"v8.1"`` -> ``"v8"``."""
    return version.split(".", 1)[0]


def _severity_units(fault: FaultSpec, severity_levels: int) -> float:
    # severities are rescaled so the top level has the same strength for any cardinality
    return fault.severity * 3.0 / severity_levels


def failure_logit_offset(fault: FaultSpec, severity_levels: int = 3) -> float:
    base, per_sev, _, _ = FAULT_LOGITS[fault.family]
    if fault.family is FaultFamily.NO_FAULT:
        return 0.0
    return base + per_sev * _severity_units(fault, severity_levels)


def q_logit_offset(fault: FaultSpec, severity_levels: int = 3) -> float:
    _, _, base, per_sev = FAULT_LOGITS[fault.family]
    if fault.family is FaultFamily.NO_FAULT:
        return 0.0
    return base - per_sev * _severity_units(fault, severity_levels)


def fault_shift(fault: FaultSpec, family: str, severity_levels: int = 3) -> float:
    """Full-strength telemetry shift of ``family`` (in noise-scale units)."""
    return FAULT_EFFECTS[fault.family].get(family, 0.0) * _severity_units(fault, severity_levels)


def sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))
