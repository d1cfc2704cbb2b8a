"""Cost-misspecification sweep and perturbation response curves."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..core import CostModel, bayes_threshold, per_run_costs
from ..features import FeatureVector
from ..scoring import Scorer

DEFAULT_C_FN_GRID = (2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0)
DEFAULT_C_AUTO_GRID = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3)


@dataclass(frozen=True)
class DominanceCell:
    c_fn: float
    c_auto: float
    tau: float
    costs: dict[str, float]
    best: str

    def to_dict(self) -> dict:
        return {"c_fn": self.c_fn, "c_auto": self.c_auto, "tau": self.tau,
                "costs": self.costs, "best": self.best}


@dataclass(frozen=True)
class DominanceMap:
    methods: tuple[str, ...]
    cells: tuple[DominanceCell, ...]
    c_fp: float

    def wins(self) -> dict[str, int]:
        out = {m: 0 for m in self.methods}
        for c in self.cells:
            out[c.best] += 1
        return out

    def records(self) -> list[dict]:
        """Flat grid records for external plotting."""
        return [{**c.to_dict(), "c_fp": self.c_fp} for c in self.cells]


def cost_sweep(
    predictions_by_method: Mapping[str, Sequence[float]],
    y: Sequence[float],
    c_fn_grid: Sequence[float] = DEFAULT_C_FN_GRID,
    c_auto_grid: Sequence[float] = DEFAULT_C_AUTO_GRID,
    c_fp: float = 1.0,
) -> DominanceMap:
    """Per-cell decision cost of every method at that cell's Bayes threshold.

    Ties go to the method listed first in ``predictions_by_method``.
    """
    methods = tuple(predictions_by_method)
    if len(methods) < 2:
        raise ValueError("cost sweep needs at least two methods")
    y = np.asarray(y, dtype=float)
    preds = {m: np.asarray(predictions_by_method[m], dtype=float) for m in methods}
    cells = []
    for c_fn in c_fn_grid:
        for c_auto in c_auto_grid:
            cost = CostModel(c_fp=c_fp, c_fn=c_fn, c_auto=c_auto)
            tau = bayes_threshold(cost)
            costs = {m: float(per_run_costs(preds[m], y, cost, tau).sum()) for m in methods}
            best = min(methods, key=lambda m: (costs[m], methods.index(m)))
            cells.append(DominanceCell(float(c_fn), float(c_auto), tau, costs, best))
    return DominanceMap(methods, tuple(cells), float(c_fp))


@dataclass(frozen=True)
class ResponseCurve:
    feature: str
    deltas: tuple[float, ...]
    mean_p: tuple[float, ...]
    weight: float

    def to_dict(self) -> dict:
        return {"feature": self.feature, "deltas": list(self.deltas), "mean_p": list(self.mean_p),
                "weight": self.weight}


def perturbation_check(scorer: Scorer, fvs: Sequence[FeatureVector], feature_name: str,
                       deltas: Sequence[float]) -> ResponseCurve:
    """Mean predicted p after shifting one standardized dense feature by each delta."""
    if not scorer.variant.uses_dense:
        raise ValueError(f"{scorer.variant.value} has no dense channel to perturb")
    if not fvs:
        raise ValueError("no feature vectors to perturb")
    names = fvs[0].names
    if feature_name not in names:
        raise KeyError(f"unknown dense feature {feature_name!r}")
    col = names.index(feature_name)
    H = scorer.design_matrix(fvs)
    out = []
    for d in deltas:
        Hd = H.copy()
        Hd[:, col] += d
        out.append(float(scorer.predict_design(Hd).mean()))
    return ResponseCurve(feature_name, tuple(float(d) for d in deltas), tuple(out), float(scorer.weights[col]))
