"""Strict-causal feature extraction.

Only evidence available by the failure observation is used: telemetry in the
pre-failure window, governed pre-run metadata tokens, and statistics over
earlier primary runs of the same test.  A leakage-ablation mode additionally
aggregates the post-failure samples as separate, clearly named features.
"""
from __future__ import annotations

import bisect
import dataclasses
import hashlib
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .simulator.model import TELEMETRY_FAMILIES, RunRecord, version_lineage

AGGREGATES = ("mean", "max", "std", "p95")
HISTORY_FEATURES = ("duration_baseline", "historical_failure_rate")
N_WORKLOAD_BUCKETS = 3
CONTEXT_FEATURES = tuple(f"ctx_workload_h{b}" for b in range(N_WORKLOAD_BUCKETS)) + ("ctx_version_v8",)
WINDOW_MODES = ("pre_only", "leakage_ablation")
FEATURE_SCHEMA_VERSION = 1

# raw identifiers are never admitted to the sparse channel
GOVERNED_DROP_FIELDS = frozenset({"run_id", "test_id", "commit_id"})

DEFAULT_KEY_FAMILIES = ("lock_wait_ratio", "raft_apply_latency", "queue_wait")
DEFAULT_KEY_FEATURES = tuple(f"{fam}__{a}" for fam in DEFAULT_KEY_FAMILIES for a in AGGREGATES)
DEFAULT_GATE_THRESHOLD = 0.5


class LeakageError(ValueError):
    """Input carries evidence from after the failure observation."""


class SchemaError(ValueError):
    pass


def feature_names(window_mode: str = "pre_only") -> tuple[str, ...]:
    if window_mode not in WINDOW_MODES:
        raise ValueError(f"window_mode must be one of {WINDOW_MODES}")
    names = [f"{fam}__{a}" for fam in TELEMETRY_FAMILIES for a in AGGREGATES]
    names += list(HISTORY_FEATURES) + list(CONTEXT_FEATURES)
    if window_mode == "leakage_ablation":
        names += [f"{fam}__post_{a}" for fam in TELEMETRY_FAMILIES for a in AGGREGATES]
    return tuple(names)


def sequence_names(timesteps: int = 5) -> tuple[str, ...]:
    return tuple(f"{fam}__t{k}" for fam in TELEMETRY_FAMILIES for k in range(timesteps))


def schema_hash(names: Sequence[str]) -> str:
    blob = f"v{FEATURE_SCHEMA_VERSION}\n" + "\n".join(names)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class FeatureSchema:
    window_mode: str = "pre_only"
    window_seconds: float = 120.0
    timesteps: int = 5

    @property
    def names(self) -> tuple[str, ...]:
        return feature_names(self.window_mode)

    @property
    def hash(self) -> str:
        return schema_hash(self.names)

    def manifest(self) -> dict:
        return {
            "format": "scout-feature-schema",
            "schema_version": FEATURE_SCHEMA_VERSION,
            "window_mode": self.window_mode,
            "window_seconds": self.window_seconds,
            "timesteps": self.timesteps,
            "n_dense": len(self.names),
            "names": list(self.names),
            "sequence_names": list(sequence_names(self.timesteps)),
            "schema_hash": self.hash,
        }


def write_schema_manifest(path, schema: FeatureSchema | None = None) -> Path:
    path = Path(path)
    path.write_text(json.dumps((schema or FeatureSchema()).manifest(), indent=2) + "\n")
    return path


@dataclass(frozen=True, eq=False)
class FeatureVector:
    run_id: str
    names: tuple[str, ...]
    dense: np.ndarray
    sequence: np.ndarray
    sparse_tokens: tuple[str, ...]
    missingness: np.ndarray
    escalation_preferred: bool = False
    schema_hash: str = ""
    start_time: float = 0.0
    context: Mapping[str, str] = field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return float(self.dense[self.names.index(name)])

    def missing(self, name: str) -> float:
        return float(self.missingness[self.names.index(name)])


class Aggregates(tuple):
    __slots__ = ()

    def __new__(cls, mean, max_, std, p95):
        return super().__new__(cls, (mean, max_, std, p95))

    mean = property(lambda self: self[0])
    max = property(lambda self: self[1])
    std = property(lambda self: self[2])
    p95 = property(lambda self: self[3])


def aggregate_family(series: Sequence[float], context: str = "") -> Aggregates:
    """Window aggregates (mean, max, population std, nearest-rank p95).

    An empty series aggregates to zeros; the caller records it as missing.
    """
    n = len(series)
    if n == 0:
        return Aggregates(0.0, 0.0, 0.0, 0.0)
    for v in series:
        if not math.isfinite(v):
            where = f" ({context})" if context else ""
            raise ValueError(f"non-finite telemetry sample {v!r}{where}")
    ordered = sorted(series)
    mean = math.fsum(ordered) / n
    var = math.fsum((v - mean) ** 2 for v in ordered) / n
    p95 = ordered[max(0, math.ceil(0.95 * n) - 1)]
    return Aggregates(mean, ordered[-1], math.sqrt(var), p95)


@dataclass(frozen=True)
class HistoryStats:
    n_runs: int
    mean_duration: float
    failure_rate: float


class HistoryIndex:
    """Per-test summaries of earlier primary runs.

    Queries at time ``t`` only see runs whose start time is strictly earlier
    than ``t``.  Rerun outcomes are never stored.
    """

    def __init__(self):
        self._starts: dict[str, list[float]] = {}
        self._cum_duration: dict[str, list[float]] = {}
        self._cum_failed: dict[str, list[int]] = {}

    @classmethod
    def from_runs(cls, runs: Iterable[RunRecord]) -> "HistoryIndex":
        index = cls()
        for r in sorted(runs, key=lambda r: r.start_time):
            index.add(r.test_id, r.start_time, r.duration, r.failed)
        return index

    def add(self, test_id: str, start_time: float, duration: float, failed: bool) -> None:
        starts = self._starts.setdefault(test_id, [])
        cd = self._cum_duration.setdefault(test_id, [0.0])
        cf = self._cum_failed.setdefault(test_id, [0])
        if starts and start_time < starts[-1]:
            # out-of-order arrival: rebuild this test's prefix sums
            rows = list(zip(starts, np.diff(cd).tolist(), np.diff(cf).tolist()))
            rows.append((start_time, duration, int(failed)))
            rows.sort(key=lambda row: row[0])
            self._starts[test_id] = [row[0] for row in rows]
            self._cum_duration[test_id] = [0.0] + np.cumsum([row[1] for row in rows]).tolist()
            self._cum_failed[test_id] = [0] + np.cumsum([row[2] for row in rows]).tolist()
            return
        starts.append(start_time)
        cd.append(cd[-1] + duration)
        cf.append(cf[-1] + int(failed))

    def query(self, test_id: str, t: float) -> HistoryStats:
        starts = self._starts.get(test_id)
        if not starts:
            return HistoryStats(0, 0.0, 0.0)
        k = bisect.bisect_left(starts, t)
        if k == 0:
            return HistoryStats(0, 0.0, 0.0)
        return HistoryStats(k, self._cum_duration[test_id][k] / k, self._cum_failed[test_id][k] / k)

    def __len__(self):
        return sum(len(v) for v in self._starts.values())


def _workload_bucket(workload: str) -> int:
    return zlib.crc32(workload.encode()) % N_WORKLOAD_BUCKETS


def govern_tokens(tokens: Iterable[str], run: RunRecord | None = None) -> tuple[str, ...]:
    """Drop identity-bearing tokens from pre-run metadata."""
    raw_ids = {run.run_id, run.test_id, run.commit_id} if run is not None else set()
    kept = []
    for tok in tokens:
        fld, _, value = tok.partition("=")
        if fld in GOVERNED_DROP_FIELDS or value in raw_ids:
            continue
        kept.append(tok)
    return tuple(kept)


def extract_features(
    run: RunRecord,
    history: HistoryIndex,
    window_mode: str = "pre_only",
    *,
    window_seconds: float = 120.0,
    timesteps: int = 5,
    key_features: Sequence[str] = DEFAULT_KEY_FEATURES,
    gate_threshold: float = DEFAULT_GATE_THRESHOLD,
) -> FeatureVector:
    """Build the strict-causal feature vector of a failed run."""
    if window_mode not in WINDOW_MODES:
        raise ValueError(f"window_mode must be one of {WINDOW_MODES}")
    if not run.failed:
        raise ValueError(f"run {run.run_id} did not fail; nothing to triage")
    unknown = set(run.telemetry) - set(TELEMETRY_FAMILIES)
    if unknown:
        raise SchemaError(f"run {run.run_id}: unknown telemetry families {sorted(unknown)}")
    ablation = window_mode == "leakage_ablation"

    names = feature_names(window_mode)
    dense: list[float] = []
    miss: list[float] = []
    post_dense: list[float] = []
    post_miss: list[float] = []
    seq = [0.0] * (len(TELEMETRY_FAMILIES) * timesteps)
    step = window_seconds / (timesteps - 1) if timesteps > 1 else 1.0

    for f_i, fam in enumerate(TELEMETRY_FAMILIES):
        pre = []
        post = []
        for t, v in run.telemetry.get(fam, ()):
            if t > 0:
                if not ablation:
                    raise LeakageError(
                        f"run {run.run_id}: {fam} sample at +{t:g}s is after the failure"
                    )
                post.append(v)
            elif t >= -window_seconds:
                pre.append(v)
                k = int(round((t + window_seconds) / step)) if timesteps > 1 else 0
                seq[f_i * timesteps + min(max(k, 0), timesteps - 1)] = v
        agg = aggregate_family(pre, context=f"run {run.run_id}, family {fam}")
        dense.extend(agg)
        m = max(0.0, 1.0 - len(pre) / timesteps)
        miss.extend((m, m, m, m))
        if ablation:
            post_dense.extend(aggregate_family(post, context=f"run {run.run_id}, family {fam} post"))
            pm = 0.0 if post else 1.0
            post_miss.extend((pm, pm, pm, pm))

    stats = history.query(run.test_id, run.start_time)
    cold = 1.0 if stats.n_runs == 0 else 0.0
    dense.extend((stats.mean_duration, stats.failure_rate))
    miss.extend((cold, cold))

    bucket = _workload_bucket(run.workload)
    dense.extend(1.0 if b == bucket else 0.0 for b in range(N_WORKLOAD_BUCKETS))
    dense.append(1.0 if version_lineage(run.version) == "v8" else 0.0)
    miss.extend([0.0] * len(CONTEXT_FEATURES))

    dense.extend(post_dense)
    miss.extend(post_miss)

    missingness = np.asarray(miss)
    fv = FeatureVector(
        run_id=run.run_id,
        names=names,
        dense=np.asarray(dense),
        sequence=np.asarray(seq),
        sparse_tokens=govern_tokens(run.metadata_tokens, run),
        missingness=missingness,
        schema_hash=schema_hash(names),
        start_time=run.start_time,
        context={"workload": run.workload, "version": run.version,
                 "test_id": run.test_id, "commit_id": run.commit_id},
    )
    gate = missingness_gate(fv, key_features, gate_threshold)
    if gate:
        fv = dataclasses.replace(fv, escalation_preferred=True)
    return fv


def missingness_gate(fv: FeatureVector, key_features: Iterable[str], threshold: float) -> bool:
    """True iff the mean missingness over ``key_features`` exceeds ``threshold``."""
    keys = list(key_features)
    if not keys:
        raise ValueError("key feature set must be nonempty")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    idx = {n: i for i, n in enumerate(fv.names)}
    try:
        vals = [fv.missingness[idx[k]] for k in keys]
    except KeyError as exc:
        raise SchemaError(f"key feature {exc} not in schema") from None
    return float(np.mean(vals)) > threshold


def extract_dataset(
    dataset: Sequence[RunRecord],
    window_mode: str = "pre_only",
    *,
    labeled_only: bool = True,
    history: HistoryIndex | None = None,
    **kwargs,
) -> list[FeatureVector]:
    """Extract features for every failed run (labeled ones by default).

    History is built from all primary runs of ``dataset``; queries remain
    strictly causal because the index filters by start time.
    """
    history = history or HistoryIndex.from_runs(dataset)
    out = []
    for r in dataset:
        if not r.failed or (labeled_only and not r.labeled):
            continue
        out.append(extract_features(r, history, window_mode, **kwargs))
    return out


def dense_matrix(fvs: Sequence[FeatureVector]) -> np.ndarray:
    if not fvs:
        return np.zeros((0, 0))
    return np.vstack([fv.dense for fv in fvs])


def feature_record(fv: FeatureVector) -> dict:
    """JSON-ready form of a feature vector (names live in the schema manifest)."""
    return {
        "run_id": fv.run_id,
        "schema_hash": fv.schema_hash,
        "dense": fv.dense.tolist(),
        "sequence": fv.sequence.tolist(),
        "sparse_tokens": list(fv.sparse_tokens),
        "missingness": fv.missingness.tolist(),
        "escalation_preferred": fv.escalation_preferred,
        "start_time": fv.start_time,
        "context": dict(fv.context),
    }


def feature_from_record(d: Mapping, names: Sequence[str]) -> FeatureVector:
    try:
        dense = np.asarray(d["dense"], dtype=float)
        missingness = np.asarray(d.get("missingness", [0.0] * len(dense)), dtype=float)
        fv = FeatureVector(
            run_id=str(d["run_id"]),
            names=tuple(names),
            dense=dense,
            sequence=np.asarray(d.get("sequence", []), dtype=float),
            sparse_tokens=tuple(d.get("sparse_tokens", ())),
            missingness=missingness,
            escalation_preferred=bool(d.get("escalation_preferred", False)),
            schema_hash=str(d["schema_hash"]),
            start_time=float(d.get("start_time", 0.0)),
            context=dict(d.get("context", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed feature record: {exc}") from None
    if dense.shape != (len(names),) or missingness.shape != dense.shape:
        raise SchemaError(f"feature record {fv.run_id}: expected {len(names)} dense values, got {dense.size}")
    return fv


def export_features(fvs: Sequence[FeatureVector], path, schema: FeatureSchema | None = None) -> tuple[Path, Path]:
    """Write feature records as JSONL plus a ``.schema.json`` sidecar manifest."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for fv in fvs:
            fh.write(json.dumps(feature_record(fv), separators=(",", ":")) + "\n")
    if schema is None:
        ablation = bool(fvs) and fvs[0].names == feature_names("leakage_ablation")
        schema = FeatureSchema(window_mode="leakage_ablation" if ablation else "pre_only")
    manifest = write_schema_manifest(path.with_name(path.name + ".schema.json"), schema)
    return path, manifest
