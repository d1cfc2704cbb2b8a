"""Decision-theoretic primitives shared by every stage of the triage pipeline.

A failed primary run is either auto-rerun (likely flaky) or escalated (likely
persistent).  Costs are unit-free reals.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class Decision(str, enum.Enum):
    RERUN = "rerun"
    ESCALATE = "escalate"


@dataclass(frozen=True)
class CostModel:
    """Costs of the two actions.

    Parameters
    ----------
    c_fp : float
        Cost of auto-rerunning a persistent failure.
    c_fn : float
        Cost of escalating a flaky failure.
    c_auto : float
        Overhead paid by every auto-rerun.
    """

    c_fp: float = 1.0
    c_fn: float = 8.0
    c_auto: float = 0.15

    def __post_init__(self):
        for name in ("c_fp", "c_fn", "c_auto"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
            object.__setattr__(self, name, value)
        if self.c_fp + self.c_fn <= 0:
            raise ValueError("degenerate cost model: c_fp + c_fn must be > 0")

    @property
    def tau(self) -> float:
        return bayes_threshold(self)

    def to_dict(self) -> dict:
        return {"c_fp": self.c_fp, "c_fn": self.c_fn, "c_auto": self.c_auto}


@dataclass(frozen=True)
class RerunTrace:
    """Outcomes of the reruns issued after a primary failure, in attempt order.

    ``True`` means the rerun passed.
    """

    outcomes: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(bool(o) for o in self.outcomes))

    @property
    def budget_used(self) -> int:
        return len(self.outcomes)

    def passes(self, R: int | None = None) -> int:
        """Number of passing attempts among the first ``R``."""
        R = self.budget_used if R is None else R
        return sum(self.outcomes[:R])

    def to_string(self) -> str:
        return "".join("P" if o else "F" for o in self.outcomes)

    @classmethod
    def from_string(cls, s: str) -> "RerunTrace":
        bad = set(s) - {"P", "F"}
        if bad:
            raise ValueError(f"invalid rerun outcome characters {sorted(bad)} in {s!r}")
        return cls(tuple(c == "P" for c in s))


@dataclass(frozen=True)
class LabeledExample:
    run_id: str
    target: float
    weight: float = 1.0
    oracle: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.target <= 1.0:
            raise ValueError(f"target must lie in [0, 1], got {self.target}")
        if not self.weight > 0:
            raise ValueError(f"weight must be positive, got {self.weight}")


def bayes_threshold(cost: CostModel) -> float:
    """Indifference point between rerun and escalate under calibrated p.

    Rerunning costs ``c_auto + (1 - p) c_fp`` in expectation and escalating
    costs ``p c_fn``; they are equal at ``(c_auto + c_fp) / (c_fp + c_fn)``.
    The result is clamped to [0, 1]; a value of 1 with ``c_auto > c_fn``
    means the policy escalates everything.
    """
    denom = cost.c_fp + cost.c_fn
    if denom <= 0:
        raise ValueError("degenerate cost model: c_fp + c_fn must be > 0")
    return float(min(1.0, max(0.0, (cost.c_auto + cost.c_fp) / denom)))


def decide(p: float, tau: float) -> Decision:
    # inclusive boundary: p == tau reruns
    return Decision.RERUN if p >= tau else Decision.ESCALATE


def budget_label(trace: RerunTrace, R: int) -> int:
    """1 iff any of the first ``R`` reruns passed."""
    if R <= 0:
        raise ValueError("rerun budget R must be >= 1")
    if R > trace.budget_used:
        raise ValueError(
            f"budget R={R} exceeds the {trace.budget_used} recorded outcomes; truncate first"
        )
    return int(any(trace.outcomes[:R]))


def per_run_costs(p, y, cost: CostModel, tau: float) -> np.ndarray:
    """Cost of each thresholded decision.

    ``y`` may be fractional (a soft target); the cost is then its expectation,
    which is linear in ``y``.
    """
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    rerun = p >= tau
    return np.where(rerun, cost.c_auto + (1.0 - y) * cost.c_fp, y * cost.c_fn)


def decision_cost(
    predictions: Iterable[tuple[float, float]] | None = None,
    cost: CostModel | None = None,
    tau: float | None = None,
    *,
    p: Sequence[float] | None = None,
    y: Sequence[float] | None = None,
    weights: Sequence[float] | None = None,
) -> float:
    """Summed fixed-threshold decision cost.

    Accepts either a list of ``(p, y)`` pairs or the ``p=``/``y=`` arrays.
    ``tau`` defaults to the Bayes threshold of ``cost``.
    """
    if cost is None:
        raise TypeError("cost model is required")
    if predictions is not None:
        pairs = list(predictions)
        p = [a for a, _ in pairs]
        y = [b for _, b in pairs]
    if p is None or y is None:
        raise TypeError("pass (p, y) pairs or both p= and y=")
    if tau is None:
        tau = bayes_threshold(cost)
    costs = per_run_costs(p, y, cost, tau)
    if weights is not None:
        costs = costs * np.asarray(weights, dtype=float)
    return float(costs.sum())


def mean_decision_cost(p, y, cost: CostModel, tau: float | None = None) -> float:
    n = len(p)
    return decision_cost(p=p, y=y, cost=cost, tau=tau) / n if n else 0.0
