"""Rerun-budget correction with an empirical-Bayes beta-binomial prior.

A failure observed under a small rerun budget ``R`` gets a soft training
target: the posterior probability that a larger budget ``R'`` would have seen
at least one pass.  The per-rerun pass probability has a Beta prior whose
parameters are fitted by the method of moments on complete rerun traces.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import LabeledExample, RerunTrace, budget_label
from .simulator.model import RunRecord

FALLBACK_MASS = 50.0
SOFT_TARGET_FORMAT = "scout-soft-targets"


@dataclass(frozen=True)
class BetaPrior:
    alpha: float
    beta: float
    n_runs: int = 0
    R: int = 0
    sample_mean: float = float("nan")
    sample_var: float = float("nan")
    fallback: bool = False

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"prior {name} must be positive and finite, got {v!r}")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "n_runs": self.n_runs, "R": self.R,
                "sample_mean": self.sample_mean, "sample_var": self.sample_var,
                "fallback": self.fallback}

    @classmethod
    def from_dict(cls, d: dict) -> "BetaPrior":
        return cls(**d)


def fit_eb_prior(traces: Sequence[RerunTrace], R: int, fallback_mass: float = FALLBACK_MASS) -> BetaPrior:
    """Method-of-moments beta-binomial fit to pass counts out of ``R``.

    Only traces that recorded at least ``R`` attempts are used; traces that
    stopped early at a pass carry a censored count and are skipped.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    if not traces:
        raise ValueError("no rerun traces to fit")
    k = np.array([t.passes(R) for t in traces if t is not None and t.budget_used >= R], dtype=float)
    n = k.size
    if n < 2:
        raise ValueError(f"need at least 2 traces with {R} recorded attempts, got {n}")
    m = float(k.mean())
    v = float(k.var())
    mu = m / R
    if 0 < mu < 1 and R > 1:
        rho = (v / (R * mu * (1 - mu)) - 1) / (R - 1)
        if 0 < rho < 1:
            mass = 1.0 / rho - 1.0
            return BetaPrior(mu * mass, (1 - mu) * mass, n, R, m, v, False)
    floor = 1.0 / (n * R + 2)
    mu_fb = min(max(mu, floor), 1 - floor)
    return BetaPrior(mu_fb * fallback_mass, (1 - mu_fb) * fallback_mass, n, R, m, v, True)


def _no_pass_probability(alpha: float, beta: float, R: int, R_prime: int) -> float:
    m = 1.0
    for j in range(R_prime - R):
        m *= (beta + R + j) / (alpha + beta + R + j)
    return m


def posterior_soft_target(prefix, R_prime: int, prior: BetaPrior) -> float:
    """Probability that a budget of ``R_prime`` would observe a pass.

    ``prefix`` holds the first ``R`` outcomes (``True`` for pass) or is a
    :class:`RerunTrace`.
    """
    outcomes = prefix.outcomes if isinstance(prefix, RerunTrace) else tuple(bool(o) for o in prefix)
    R = len(outcomes)
    if R < 1:
        raise ValueError("prefix must contain at least one outcome")
    if R_prime <= R:
        raise ValueError(f"R' ({R_prime}) must exceed the observed budget R ({R})")
    if not isinstance(prior, BetaPrior):
        raise TypeError("prior must be a BetaPrior")
    if any(outcomes):
        return 1.0
    return 1.0 - _no_pass_probability(prior.alpha, prior.beta, R, R_prime)


def correction_prior(dataset: Sequence[RunRecord], R_observed: int) -> BetaPrior:
    """EB prior fitted on the observed-budget prefixes of labeled failures."""
    traces = [r.rerun_trace for r in dataset if r.failed and r.labeled]
    return fit_eb_prior(traces, R_observed)


def build_corrected_training_set(
    dataset: Sequence[RunRecord],
    R_observed: int,
    R_oracle: int,
    prior: BetaPrior | None = None,
    *,
    include_oracle: bool = False,
) -> list[LabeledExample]:
    """One posterior-soft example per labeled failed run, in dataset order.

    Runs without a rerun trace (selectively masked) are excluded.  With
    ``R_oracle == R_observed`` the targets are the hard budget labels.
    """
    if R_observed < 1 or R_oracle < R_observed:
        raise ValueError("need 1 <= R_observed <= R_oracle")
    runs = [r for r in dataset if r.failed and r.labeled]
    for r in runs:
        if r.rerun_trace.budget_used < R_observed:
            raise ValueError(f"run {r.run_id} recorded fewer than {R_observed} reruns")
        if include_oracle and r.rerun_trace.budget_used < R_oracle:
            raise ValueError(
                f"run {r.run_id} has {r.rerun_trace.budget_used} recorded reruns; "
                f"oracle label at R={R_oracle} is unavailable"
            )
    if R_oracle > R_observed and prior is None:
        prior = fit_eb_prior([r.rerun_trace for r in runs], R_observed)
    out = []
    for r in runs:
        prefix = r.rerun_trace.outcomes[:R_observed]
        if R_oracle == R_observed:
            target = float(any(prefix))
        else:
            target = posterior_soft_target(prefix, R_oracle, prior)
        oracle = budget_label(r.rerun_trace, R_oracle) if include_oracle else None
        out.append(LabeledExample(r.run_id, target, 1.0, oracle))
    return out


def naive_training_set(dataset: Sequence[RunRecord], R: int) -> list[LabeledExample]:
    """Hard budget-``R`` labels for every labeled failed run."""
    return [LabeledExample(r.run_id, float(budget_label(r.rerun_trace, R)))
            for r in dataset if r.failed and r.labeled]


def oracle_labels(dataset: Sequence[RunRecord], R_oracle: int) -> dict[str, int]:
    return {r.run_id: budget_label(r.rerun_trace, R_oracle) for r in dataset if r.failed and r.labeled}


def export_soft_targets(examples: Sequence[LabeledExample], path, prior: BetaPrior | None = None,
                        R_observed: int | None = None, R_oracle: int | None = None) -> Path:
    path = Path(path)
    header = {"format": SOFT_TARGET_FORMAT, "schema_version": 1, "n": len(examples),
              "R_observed": R_observed, "R_oracle": R_oracle,
              "prior": None if prior is None else prior.to_dict()}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for ex in examples:
            rec = {"run_id": ex.run_id, "soft_target": ex.target, "weight": ex.weight}
            if ex.oracle is not None:
                rec["oracle_label"] = ex.oracle
            fh.write(json.dumps(rec) + "\n")
    return path


def import_soft_targets(path) -> list[LabeledExample]:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != SOFT_TARGET_FORMAT:
            raise ValueError(f"{path} is not a {SOFT_TARGET_FORMAT} file")
        out = []
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(LabeledExample(d["run_id"], d["soft_target"], d.get("weight", 1.0),
                                          d.get("oracle_label")))
    return out
