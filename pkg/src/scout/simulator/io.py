"""Line-delimited JSON dataset files.

The first line is a header object carrying the schema version and the
telemetry sample grid; every following line is one run.  Telemetry is stored
flat as ``<family>__t<k>`` (``null`` for a missing sample); post-failure
samples appear as ``<family>__post_t0`` only in leakage-ablation exports.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Sequence

from ..core import RerunTrace
from .model import POST_FAILURE_OFFSET, TELEMETRY_FAMILIES, FaultSpec, RunRecord

DATASET_FORMAT = "scout-dataset"
DATASET_SCHEMA_VERSION = 1


class DatasetFormatError(ValueError):
    pass


def _infer_offsets(dataset: Sequence[RunRecord]) -> list[float]:
    for r in dataset:
        for samples in r.telemetry.values():
            pre = sorted({t for t, _ in samples if t <= 0})
            if pre:
                return pre
    return []


def record_to_dict(r: RunRecord, offsets: Sequence[float], include_post_failure: bool) -> dict:
    d = {
        "run_id": r.run_id,
        "test_id": r.test_id,
        "commit_id": r.commit_id,
        "workload": r.workload,
        "version": r.version,
        "start_time": r.start_time,
        "duration": r.duration,
        "failure_time": r.failure_time,
        "metadata_tokens": list(r.metadata_tokens),
        "rerun_outcomes": r.rerun_trace.to_string() if r.rerun_trace is not None else None,
        "fault_family": r.fault.family.value,
        "fault_severity": r.fault.severity,
        "audit_latent_q": r.latent_q,
        "audit_defect": r.persistent_defect,
    }
    if r.failed:
        for fam in TELEMETRY_FAMILIES:
            by_offset = dict(r.telemetry.get(fam, ()))
            for k, t in enumerate(offsets):
                d[f"{fam}__t{k}"] = by_offset.get(t)
            if include_post_failure:
                d[f"{fam}__post_t0"] = by_offset.get(POST_FAILURE_OFFSET)
    return d


def record_from_dict(d: dict, offsets: Sequence[float]) -> RunRecord:
    try:
        telemetry = {}
        if d.get("failure_time") is not None:
            for fam in TELEMETRY_FAMILIES:
                samples = []
                for k, t in enumerate(offsets):
                    v = d.get(f"{fam}__t{k}")
                    if v is not None:
                        samples.append((float(t), float(v)))
                v = d.get(f"{fam}__post_t0")
                if v is not None:
                    samples.append((POST_FAILURE_OFFSET, float(v)))
                telemetry[fam] = tuple(samples)
        outcomes = d.get("rerun_outcomes")
        return RunRecord(
            run_id=d["run_id"],
            test_id=d["test_id"],
            commit_id=d["commit_id"],
            workload=d["workload"],
            version=d["version"],
            start_time=float(d["start_time"]),
            duration=float(d["duration"]),
            failure_time=None if d.get("failure_time") is None else float(d["failure_time"]),
            telemetry=telemetry,
            metadata_tokens=tuple(d.get("metadata_tokens", ())),
            rerun_trace=None if outcomes is None else RerunTrace.from_string(outcomes),
            fault=FaultSpec(d.get("fault_family", "no_fault"), int(d.get("fault_severity", 0))),
            latent_q=float(d.get("audit_latent_q", float("nan"))),
            persistent_defect=bool(d.get("audit_defect", False)),
        )
    except KeyError as exc:
        raise DatasetFormatError(f"record is missing field {exc}") from None


def export_dataset(dataset: Sequence[RunRecord], path, include_post_failure: bool = False,
                   offsets: Sequence[float] | None = None) -> Path:
    """Write ``dataset`` to ``path``; returns the path."""
    path = Path(path)
    offsets = list(offsets) if offsets is not None else _infer_offsets(dataset)
    header = {
        "format": DATASET_FORMAT,
        "schema_version": DATASET_SCHEMA_VERSION,
        "n_runs": len(dataset),
        "families": list(TELEMETRY_FAMILIES),
        "telemetry_offsets": offsets,
        "leakage_ablation": bool(include_post_failure),
    }
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, separators=(",", ":")) + "\n")
            for r in dataset:
                fh.write(json.dumps(record_to_dict(r, offsets, include_post_failure), separators=(",", ":")) + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc
    finally:
        if tmp.exists():
            tmp.unlink()
    return path


def read_header(line: str) -> dict:
    header = json.loads(line)
    if header.get("format") != DATASET_FORMAT:
        raise DatasetFormatError(f"not a {DATASET_FORMAT} file")
    if header.get("schema_version") != DATASET_SCHEMA_VERSION:
        raise DatasetFormatError(f"unsupported dataset schema version {header.get('schema_version')!r}")
    return header


def import_dataset(path) -> list[RunRecord]:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            header = read_header(fh.readline())
            offsets = header["telemetry_offsets"]
            return [record_from_dict(json.loads(line), offsets) for line in fh if line.strip()]
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc}") from exc


def iter_records(lines: Iterable[str], offsets: Sequence[float]):
    for line in lines:
        if line.strip():
            yield record_from_dict(json.loads(line), offsets)
