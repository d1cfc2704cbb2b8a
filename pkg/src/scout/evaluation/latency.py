"""Steady-state per-record latency of the triage path."""
from __future__ import annotations

import gc
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..bundle import TriageModel, load_model
from ..calibration import apply
from ..features import HistoryIndex
from ..scoring import score
from ..simulator.model import RunRecord

PERCENTILES = (50, 95, 99)


@dataclass(frozen=True)
class StageLatency:
    p50_us: float
    p95_us: float
    p99_us: float

    @classmethod
    def from_samples(cls, us: np.ndarray) -> "StageLatency":
        p50, p95, p99 = np.percentile(us, PERCENTILES)
        return cls(float(p50), float(p95), float(p99))


@dataclass(frozen=True)
class LatencyReport:
    n_iters: int
    extraction: StageLatency
    inference: StageLatency
    end_to_end: StageLatency

    def to_dict(self) -> dict:
        return {"n_iters": self.n_iters,
                **{k: vars(getattr(self, k)) for k in ("extraction", "inference", "end_to_end")}}


def latency_bench(model: TriageModel | str | Path, runs: Sequence[RunRecord], n_iters: int = 10_000,
                  history: HistoryIndex | None = None, warmup: int = 500) -> LatencyReport:
    """Time extraction, inference (score + calibrate + threshold) and their sum.

    The model is loaded before timing starts; garbage collection is paused
    while sampling.
    """
    if not isinstance(model, TriageModel):
        model = load_model(model)
    failed = [r for r in runs if r.failed]
    if not failed:
        raise ValueError("no failed runs to triage")
    history = history or HistoryIndex.from_runs(runs)
    scorer, cal, tau = model.scorer, model.calibrator, model.tau

    def one(run):
        t0 = time.perf_counter_ns()
        fv = model.extract(run, history)
        t1 = time.perf_counter_ns()
        p = apply(cal, score(scorer, fv))
        _ = fv.escalation_preferred or p >= tau
        t2 = time.perf_counter_ns()
        return t1 - t0, t2 - t1

    for i in range(warmup):
        one(failed[i % len(failed)])
    ext = np.empty(n_iters)
    inf = np.empty(n_iters)
    enabled = gc.isenabled()
    gc.disable()
    try:
        for i in range(n_iters):
            ext[i], inf[i] = one(failed[i % len(failed)])
    finally:
        if enabled:
            gc.enable()
    ext /= 1e3
    inf /= 1e3
    return LatencyReport(n_iters, StageLatency.from_samples(ext), StageLatency.from_samples(inf),
                         StageLatency.from_samples(ext + inf))
