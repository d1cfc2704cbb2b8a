"""Deployable triage model: scorer, calibrator, cost model and threshold."""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .calibration import Calibrator, identity_calibrator
from .core import CostModel, Decision, bayes_threshold, decide
from .features import (
    DEFAULT_GATE_THRESHOLD,
    DEFAULT_KEY_FEATURES,
    FeatureVector,
    HistoryIndex,
    extract_features,
    feature_names,
)
from .scoring import Scorer, score
from .simulator.model import RunRecord

MODEL_FORMAT = "scout-model"
MODEL_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TriageResult:
    run_id: str
    p_raw: float
    p_calibrated: float
    decision: Decision
    escalation_preferred_override: bool
    extract_us: float = 0.0
    score_us: float = 0.0
    calibrate_us: float = 0.0

    @property
    def total_us(self) -> float:
        return self.extract_us + self.score_us + self.calibrate_us

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "p_raw": self.p_raw,
            "p_calibrated": self.p_calibrated,
            "decision": self.decision.value,
            "escalation_preferred_override": self.escalation_preferred_override,
            "latency_us": {
                "extract": round(self.extract_us, 3),
                "score": round(self.score_us, 3),
                "calibrate": round(self.calibrate_us, 3),
                "total": round(self.total_us, 3),
            },
        }


@dataclass(frozen=True, eq=False)
class TriageModel:
    scorer: Scorer
    calibrator: Calibrator = field(default_factory=identity_calibrator)
    cost: CostModel = field(default_factory=CostModel)
    tau: float | None = None
    window_mode: str = "pre_only"
    window_seconds: float = 120.0
    timesteps: int = 5
    key_features: tuple[str, ...] = DEFAULT_KEY_FEATURES
    gate_threshold: float = DEFAULT_GATE_THRESHOLD
    config_hash: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tau is None:
            object.__setattr__(self, "tau", bayes_threshold(self.cost))

    @property
    def feature_names(self) -> tuple[str, ...]:
        return feature_names(self.window_mode)

    def extract(self, run: RunRecord, history: HistoryIndex) -> FeatureVector:
        return extract_features(
            run, history, self.window_mode,
            window_seconds=self.window_seconds, timesteps=self.timesteps,
            key_features=self.key_features, gate_threshold=self.gate_threshold,
        )

    def triage(self, fv: FeatureVector, extract_us: float = 0.0) -> TriageResult:
        t0 = time.perf_counter()
        p_raw = score(self.scorer, fv)
        t1 = time.perf_counter()
        p_cal = float(self.calibrator.predict(p_raw))
        t2 = time.perf_counter()
        if fv.escalation_preferred:
            decision = Decision.ESCALATE
        else:
            decision = decide(p_cal, self.tau)
        return TriageResult(fv.run_id, p_raw, p_cal, decision, fv.escalation_preferred,
                            extract_us, (t1 - t0) * 1e6, (t2 - t1) * 1e6)

    def triage_run(self, run: RunRecord, history: HistoryIndex) -> TriageResult:
        t0 = time.perf_counter()
        fv = self.extract(run, history)
        return self.triage(fv, (time.perf_counter() - t0) * 1e6)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "format_version": MODEL_FORMAT_VERSION,
            "scorer": self.scorer.to_dict(),
            "calibrator": self.calibrator.to_dict(),
            "cost": self.cost.to_dict(),
            "tau": self.tau,
            "window_mode": self.window_mode,
            "window_seconds": self.window_seconds,
            "timesteps": self.timesteps,
            "key_features": list(self.key_features),
            "gate_threshold": self.gate_threshold,
            "config_hash": self.config_hash,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TriageModel":
        if d.get("format") != MODEL_FORMAT:
            raise ModelFormatError(f"not a {MODEL_FORMAT} file")
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format version {d.get('format_version')!r}")
        try:
            return cls(
                scorer=Scorer.from_dict(d["scorer"]),
                calibrator=Calibrator.from_dict(d["calibrator"]),
                cost=CostModel(**d["cost"]),
                tau=float(d["tau"]),
                window_mode=d["window_mode"],
                window_seconds=float(d["window_seconds"]),
                timesteps=int(d["timesteps"]),
                key_features=tuple(d["key_features"]),
                gate_threshold=float(d["gate_threshold"]),
                config_hash=d.get("config_hash", ""),
                metadata=dict(d.get("metadata", {})),
            )
        except (KeyError, ValueError) as exc:
            raise ModelFormatError(f"invalid model file: {exc}") from None


def save_model(model: TriageModel, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(model.to_dict(), indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def load_model(path) -> TriageModel:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not valid JSON ({exc})") from None
    return TriageModel.from_dict(d)


def triage_many(model: TriageModel, fvs: Sequence[FeatureVector]) -> list[TriageResult]:
    return [model.triage(fv) for fv in fvs]
