"""Train / calibrate / evaluate protocols over simulated or imported runs.

Every fit sees only its own partition: the scorer and the correction prior
use the training rows, calibrators use the calibration rows, and OA-Cal may
additionally read the *features* of the evaluation rows.  Evaluation labels
(the budget label at ``R_oracle``) are read only when metrics are computed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..calibration import (
    Calibrator,
    CalibratorKind,
    OACalConfig,
    OACalReport,
    fit_calibrator,
    identity_calibrator,
    oa_cal_scores,
)
from ..core import CostModel, bayes_threshold, budget_label, per_run_costs
from ..correction import BetaPrior, fit_eb_prior, posterior_soft_target
from ..features import FeatureVector, extract_dataset
from ..metrics import MetricReport, brier, ece10, pr_auc, roc_auc
from ..scoring import Scorer, ScorerConfig, ScorerVariant, score_many, train_scorer
from ..simulator.model import RunRecord, version_lineage

OA_CAL = "OA-Cal"
TARGET_MODES = ("naive", "posterior_soft")
DEFAULT_METHODS = ("Sigmoid", "Isotonic", "Beta", OA_CAL)
GROUP_FIELDS = ("test_id", "commit_id", "workload", "version", "version_lineage")


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    """How labeled failures are partitioned.

    ``kind`` is ``"temporal"``, ``"logo"`` (leave one group out) or
    ``"domain_transfer"``.  Filters map a context field (``workload``,
    ``version``, ``version_prefix``, ``test_id``, ``commit_id``) to a value
    or a list of values.
    """

    kind: str = "temporal"
    train: float = 0.6
    cal: float = 0.2
    test: float = 0.2
    group_field: str = "test_id"
    source_filter: Mapping | None = None
    target_filter: Mapping | None = None

    def __post_init__(self):
        if self.kind not in ("temporal", "logo", "domain_transfer"):
            raise ProtocolError(f"unknown split kind {self.kind!r}")
        fr = (self.train, self.cal, self.test)
        if any(f < 0 for f in fr) or not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
            raise ProtocolError("split fractions must be nonnegative and sum to 1")
        if self.train <= 0 or self.cal <= 0:
            raise ProtocolError("train and calibration fractions must be positive")
        if self.kind == "logo" and self.group_field not in GROUP_FIELDS:
            raise ProtocolError(f"group_field must be one of {GROUP_FIELDS}")
        if self.kind == "domain_transfer" and (self.source_filter is None or self.target_filter is None):
            raise ProtocolError("domain_transfer needs source_filter and target_filter")

    @classmethod
    def temporal(cls, train=0.6, cal=0.2, test=0.2) -> "SplitSpec":
        return cls("temporal", train, cal, test)

    @classmethod
    def leave_one_group_out(cls, group_field="test_id") -> "SplitSpec":
        return cls("logo", 0.75, 0.25, 0.0, group_field=group_field)

    @classmethod
    def domain_transfer(cls, source_filter, target_filter, train=0.6, cal=0.2, test=0.2) -> "SplitSpec":
        return cls("domain_transfer", train, cal, test, source_filter=dict(source_filter),
                   target_filter=dict(target_filter))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "train": self.train, "cal": self.cal, "test": self.test,
                "group_field": self.group_field,
                "source_filter": None if self.source_filter is None else dict(self.source_filter),
                "target_filter": None if self.target_filter is None else dict(self.target_filter)}


@dataclass(frozen=True)
class CalibrationSettings:
    methods: tuple[str, ...] = DEFAULT_METHODS
    oa: OACalConfig = OACalConfig()


@dataclass(frozen=True)
class CorrectionSettings:
    """``R_observed=None`` trains on the oracle-budget labels directly."""

    R_observed: int | None = None
    R_oracle: int = 8
    modes: tuple[str, ...] = ("naive",)

    def __post_init__(self):
        for m in self.modes:
            if m not in TARGET_MODES:
                raise ProtocolError(f"unknown target mode {m!r}")
        if self.R_observed is not None and not 1 <= self.R_observed <= self.R_oracle:
            raise ProtocolError("need 1 <= R_observed <= R_oracle")

    @property
    def R_train(self) -> int:
        return self.R_oracle if self.R_observed is None else self.R_observed


@dataclass(frozen=True)
class ScorerSettings:
    variant: ScorerVariant = ScorerVariant.STATE
    hyperparams: ScorerConfig = ScorerConfig()


@dataclass
class Partition:
    name: str
    train: np.ndarray
    cal: np.ndarray
    eval: np.ndarray


@dataclass
class FittedModel:
    partition: str
    mode: str
    scorer: Scorer
    calibrators: dict[str, Calibrator]
    prior: BetaPrior | None = None
    oa_report: OACalReport | None = None


@dataclass
class ProtocolResult:
    rows: dict[str, MetricReport]
    predictions: dict[str, np.ndarray]
    y_eval: np.ndarray
    eval_run_ids: list[str]
    models: list[FittedModel]
    split: SplitSpec
    sizes: dict[str, int]
    cost: CostModel
    group_reports: dict[str, list[MetricReport]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "split": self.split.to_dict(),
            "cost": self.cost.to_dict(),
            "sizes": self.sizes,
            "rows": {k: v.to_dict() for k, v in self.rows.items()},
            "priors": {f"{m.partition}/{m.mode}": m.prior.to_dict() for m in self.models if m.prior is not None},
            "oa_cal": {f"{m.partition}/{m.mode}": m.oa_report.to_dict() for m in self.models
                       if m.oa_report is not None},
        }


# ---------------------------------------------------------------- splits

def _context_value(fv: FeatureVector, key: str) -> str:
    if key == "version_lineage":
        return version_lineage(fv.context["version"])
    return fv.context[key]


def matches_filter(fv: FeatureVector, flt: Mapping) -> bool:
    for key, want in flt.items():
        allowed = [want] if isinstance(want, str) else list(want)
        if key == "version_prefix":
            if not any(fv.context["version"].startswith(a) for a in allowed):
                return False
        elif key in ("workload", "version", "test_id", "commit_id", "version_lineage"):
            if _context_value(fv, key) not in allowed:
                return False
        else:
            raise ProtocolError(f"unknown filter field {key!r}")
    return True


def _temporal_cut(idx: np.ndarray, start: np.ndarray, fractions: Sequence[float]) -> list[np.ndarray]:
    order = idx[np.argsort(start[idx], kind="stable")]
    n = order.size
    bounds = np.round(np.cumsum([0.0, *fractions]) * n).astype(int)
    bounds[-1] = n
    return [order[bounds[i]:bounds[i + 1]] for i in range(len(fractions))]


def make_partitions(fvs: Sequence[FeatureVector], split: SplitSpec) -> list[Partition]:
    start = np.array([fv.start_time for fv in fvs])
    all_idx = np.arange(len(fvs))
    fit_fracs = (split.train / (split.train + split.cal), split.cal / (split.train + split.cal))
    if split.kind == "temporal":
        tr, ca, te = _temporal_cut(all_idx, start, (split.train, split.cal, split.test))
        parts = [Partition("temporal", tr, ca, te)]
    elif split.kind == "logo":
        keys = np.array([_context_value(fv, split.group_field) for fv in fvs])
        parts = []
        for g in sorted(set(keys.tolist())):
            held = all_idx[keys == g]
            rest = all_idx[keys != g]
            tr, ca = _temporal_cut(rest, start, fit_fracs)
            parts.append(Partition(f"{split.group_field}={g}", tr, ca, held))
    else:
        src = all_idx[[matches_filter(fv, split.source_filter) for fv in fvs]]
        if dict(split.source_filter) == dict(split.target_filter):
            tr, ca, te = _temporal_cut(src, start, (split.train, split.cal, split.test))
        else:
            tr, ca = _temporal_cut(src, start, fit_fracs)
            used = set(tr.tolist()) | set(ca.tolist())
            te = np.array([i for i in all_idx if i not in used and matches_filter(fvs[i], split.target_filter)],
                          dtype=int)
        parts = [Partition("transfer", tr, ca, te)]
    for p in parts:
        for name in ("train", "cal", "eval"):
            if getattr(p, name).size == 0:
                raise ProtocolError(f"partition {p.name}: empty {name} split")
    return parts


# ---------------------------------------------------------------- metrics

def _safe(fn, p, y) -> float:
    try:
        return fn(p, y)
    except ValueError:
        return math.nan


def report_for(p, y, cost: CostModel) -> MetricReport:
    """Metric report that tolerates single-class groups (ranking metrics become NaN)."""
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    tau = bayes_threshold(cost)
    costs = per_run_costs(p, y, cost, tau)
    return MetricReport(
        pr_auc=_safe(pr_auc, p, y), roc_auc=_safe(roc_auc, p, y),
        ece10=ece10(p, y), brier=brier(p, y),
        cost_at_tau=float(costs.sum()), cost_mean=float(costs.mean()),
        auto_rate=float(np.mean(p >= tau)), n=int(p.size), positives=int(y.sum()), tau=tau,
    )


def aggregate_reports(reports: Sequence[MetricReport]) -> MetricReport:
    """Group-size weighted means; ranking metrics average over groups where defined."""
    n = np.array([r.n for r in reports], dtype=float)

    def wmean(attr):
        v = np.array([getattr(r, attr) for r in reports], dtype=float)
        ok = np.isfinite(v)
        return float(np.average(v[ok], weights=n[ok])) if ok.any() else math.nan

    total = float(sum(r.cost_at_tau for r in reports))
    return MetricReport(
        pr_auc=wmean("pr_auc"), roc_auc=wmean("roc_auc"), ece10=wmean("ece10"), brier=wmean("brier"),
        cost_at_tau=total, cost_mean=total / n.sum(), auto_rate=wmean("auto_rate"),
        n=int(n.sum()), positives=int(sum(r.positives for r in reports)), tau=reports[0].tau,
    )


# ---------------------------------------------------------------- protocol

def _training_targets(records: Sequence[RunRecord], idx: np.ndarray, mode: str,
                      correction: CorrectionSettings) -> tuple[np.ndarray, BetaPrior | None]:
    R = correction.R_train
    traces = [records[i].rerun_trace for i in idx]
    hard = np.array([budget_label(tr, R) for tr in traces], dtype=float)
    if mode == "naive" or R == correction.R_oracle:
        return hard, None
    prior = fit_eb_prior(traces, R)
    soft = np.array([posterior_soft_target(tr.outcomes[:R], correction.R_oracle, prior) for tr in traces])
    return soft, prior


def run_protocol(
    dataset: Sequence[RunRecord],
    split: SplitSpec | None = None,
    scorer_cfg: ScorerSettings | None = None,
    calibration_cfg: CalibrationSettings | None = None,
    correction_cfg: CorrectionSettings | None = None,
    cost: CostModel | None = None,
    *,
    window_mode: str = "pre_only",
    features: Sequence[FeatureVector] | None = None,
) -> ProtocolResult:
    """Fit and evaluate every configured (target mode, calibration) row.

    Row names are ``"<mode>/uncal"``, ``"<mode>/<Kind>"`` and ``"<mode>/oa_cal"``.
    """
    split = split or SplitSpec.temporal()
    scorer_cfg = scorer_cfg or ScorerSettings()
    calibration_cfg = calibration_cfg or CalibrationSettings()
    correction_cfg = correction_cfg or CorrectionSettings()
    cost = cost or CostModel()

    by_id = {r.run_id: r for r in dataset}
    fvs = list(features) if features is not None else extract_dataset(dataset, window_mode)
    if not fvs:
        raise ProtocolError("dataset has no labeled failed runs")
    records = [by_id[fv.run_id] for fv in fvs]
    for r in records:
        if r.rerun_trace is None or r.rerun_trace.budget_used < correction_cfg.R_oracle:
            raise ProtocolError(f"run {r.run_id} lacks {correction_cfg.R_oracle} recorded reruns")
    parts = make_partitions(fvs, split)

    methods = list(calibration_cfg.methods)
    kinds = [CalibratorKind(m) for m in methods if m != OA_CAL]
    row_names = []
    for mode in correction_cfg.modes:
        row_names.append(f"{mode}/uncal")
        row_names += [f"{mode}/{k.value}" for k in kinds]
        if OA_CAL in methods:
            row_names.append(f"{mode}/oa_cal")

    preds: dict[str, list[np.ndarray]] = {name: [] for name in row_names}
    per_group: dict[str, list[MetricReport]] = {name: [] for name in row_names}
    y_parts, id_parts, models = [], [], []
    for part in parts:
        # evaluation labels are computed here but only consumed by report_for below
        y_eval = np.array([budget_label(records[i].rerun_trace, correction_cfg.R_oracle) for i in part.eval],
                          dtype=float)
        eval_fvs = [fvs[i] for i in part.eval]
        cal_fvs = [fvs[i] for i in part.cal]
        for mode in correction_cfg.modes:
            t_train, prior = _training_targets(records, part.train, mode, correction_cfg)
            scorer = train_scorer([(fvs[i], t) for i, t in zip(part.train, t_train)],
                                  scorer_cfg.variant, scorer_cfg.hyperparams)
            # calibration targets follow the same convention, with the prior from training rows
            if prior is None:
                t_cal = np.array([budget_label(records[i].rerun_trace, correction_cfg.R_train) for i in part.cal],
                                 dtype=float)
            else:
                t_cal = np.array([posterior_soft_target(records[i].rerun_trace.outcomes[:correction_cfg.R_train],
                                                        correction_cfg.R_oracle, prior) for i in part.cal])
            s_cal = score_many(scorer, cal_fvs)
            s_eval = score_many(scorer, eval_fvs)
            cals: dict[str, Calibrator] = {"uncal": identity_calibrator()}
            for k in kinds:
                cals[k.value] = fit_calibrator(k, (s_cal, t_cal), min_pairs=calibration_cfg.oa.min_pairs)
            oa_report = None
            if OA_CAL in methods:
                cals["oa_cal"], oa_report = oa_cal_scores(s_cal, t_cal, s_eval, cost, calibration_cfg.oa)
            models.append(FittedModel(part.name, mode, scorer, cals, prior, oa_report))
            for key, cal in cals.items():
                name = f"{mode}/{key}"
                p = cal.predict(s_eval)
                preds[name].append(p)
                per_group[name].append(report_for(p, y_eval, cost))
        y_parts.append(y_eval)
        id_parts += [fvs[i].run_id for i in part.eval]

    if len(parts) == 1:
        rows = {name: per_group[name][0] for name in row_names}
    else:
        rows = {name: aggregate_reports(per_group[name]) for name in row_names}
    sizes = {
        "n_labeled": len(fvs),
        "n_partitions": len(parts),
        "train": int(sum(p.train.size for p in parts)),
        "cal": int(sum(p.cal.size for p in parts)),
        "eval": int(sum(p.eval.size for p in parts)),
    }
    return ProtocolResult(
        rows=rows,
        predictions={k: np.concatenate(v) for k, v in preds.items()},
        y_eval=np.concatenate(y_parts),
        eval_run_ids=id_parts,
        models=models,
        split=split,
        sizes=sizes,
        cost=cost,
        group_reports=per_group if len(parts) > 1 else {},
    )
