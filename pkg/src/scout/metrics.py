"""Ranking, calibration and decision metrics.

Every metric accepts either ``(p, y)`` arrays or a single iterable of
``(p, y)`` pairs.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .core import CostModel, bayes_threshold, per_run_costs

N_ECE_BINS = 10


def _arrays(p, y) -> tuple[np.ndarray, np.ndarray]:
    if y is None:
        pairs = list(p)
        if not pairs:
            raise ValueError("no predictions")
        p, y = zip(*pairs)
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError("p and y must be 1-d and of equal length")
    if p.size == 0:
        raise ValueError("no predictions")
    return p, y


def _hard(y: np.ndarray) -> np.ndarray:
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("ranking metrics need hard 0/1 labels")
    if y.min() == y.max():
        raise ValueError("ranking metrics need both classes present")
    return y.astype(bool)


def ece_bins(p: np.ndarray, n_bins: int = N_ECE_BINS) -> np.ndarray:
    """Equal-width bin index; the top bin is closed so p = 1 lands in it."""
    return np.minimum(np.floor(np.asarray(p) * n_bins).astype(int), n_bins - 1)


def ece10(p, y=None, n_bins: int = N_ECE_BINS) -> float:
    p, y = _arrays(p, y)
    b = ece_bins(p, n_bins)
    n_b = np.bincount(b, minlength=n_bins)
    sum_p = np.bincount(b, weights=p, minlength=n_bins)
    sum_y = np.bincount(b, weights=y, minlength=n_bins)
    # sum_b (n_b / n) |acc_b - conf_b| = sum_b |sum_y_b - sum_p_b| / n
    return float(np.abs(sum_y - sum_p)[n_b > 0].sum() / p.size)


def brier(p, y=None) -> float:
    p, y = _arrays(p, y)
    return float(np.mean((p - y) ** 2))


def roc_auc(p, y=None) -> float:
    p, y = _arrays(p, y)
    pos = _hard(y)
    ranks = rankdata(p)
    n1 = int(pos.sum())
    n0 = p.size - n1
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def pr_auc(p, y=None) -> float:
    """Average precision over the list ranked by descending p, ties in input order."""
    p, y = _arrays(p, y)
    pos = _hard(y)
    order = np.argsort(-p, kind="stable")
    hits = pos[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, p.size + 1)
    return float(precision[hits].sum() / hits.sum())


@dataclass(frozen=True)
class MetricReport:
    pr_auc: float
    roc_auc: float
    ece10: float
    brier: float
    cost_at_tau: float
    cost_mean: float
    auto_rate: float
    n: int
    positives: int
    tau: float

    def to_dict(self) -> dict:
        return asdict(self)


def metric_report(p, y, cost: CostModel, tau: float | None = None) -> MetricReport:
    p, y = _arrays(p, y)
    tau = bayes_threshold(cost) if tau is None else tau
    costs = per_run_costs(p, y, cost, tau)
    return MetricReport(
        pr_auc=pr_auc(p, y),
        roc_auc=roc_auc(p, y),
        ece10=ece10(p, y),
        brier=brier(p, y),
        cost_at_tau=float(costs.sum()),
        cost_mean=float(costs.mean()),
        auto_rate=float(np.mean(p >= tau)),
        n=int(p.size),
        positives=int(y.sum()),
        tau=float(tau),
    )
